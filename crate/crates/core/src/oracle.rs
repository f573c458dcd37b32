//! A full Newton-Krylov solver for the discrete equation, independent of the reduction.
//! Used to cross-check constructed solutions and to probe local uniqueness.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::ansatz::{multi_peak_sum, PeakSet};
use crate::error::{Error, Result};
use crate::grid::{norm_linf, Field, Grid};
use crate::krylov::gmres;
use crate::nonlinearity::{df_exact, f};
use crate::peaksolve::{local_maxima, ConstructedSolution};
use crate::potential::PotentialModel;

#[derive(Debug, Clone, Copy)]
pub struct NewtonConfig {
    pub damping: bool,
    pub u_floor: f64,
    pub tol_newton: f64,
    pub max_newton: usize,
    pub max_halvings: usize,
    /// Loosest inner GMRES tolerance relative to the current residual; tightened so the
    /// linear error lands below `0.1 tol_newton`.
    pub forcing: f64,
    pub restart: usize,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self {
            damping: true,
            u_floor: (-40.0f64).exp(),
            tol_newton: 1e-9,
            max_newton: 30,
            max_halvings: 30,
            forcing: 1e-4,
            restart: 100,
        }
    }
}

impl NewtonConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.u_floor > 0.0 && self.u_floor <= 1e-15) {
            return Err(Error::Config(format!("u_floor = {} must lie in (0, 1e-15]", self.u_floor)));
        }
        if !(self.tol_newton > 0.0) || self.max_newton == 0 {
            return Err(Error::Config("tol_newton must be positive and max_newton nonzero".into()));
        }
        Ok(())
    }
}

/// `F(u) = -eps^2 Δ_h u + V u - f(u)`.
pub fn pde_residual(u: &Field, eps: f64, model: &PotentialModel, u_floor: f64) -> Field {
    let g = u.grid();
    let v = model.sample(g);
    residual_with(&u.values, &v.values, eps * eps, u_floor.ln(), g)
}

fn residual_with(u: &[f64], v: &[f64], eps2: f64, ln_floor: f64, g: &Grid) -> Field {
    let mut out = vec![0.0; u.len()];
    g.laplacian_into(u, &mut out);
    for i in 0..u.len() {
        out[i] = -eps2 * out[i] + v[i] * u[i] - f(u[i], ln_floor);
    }
    Field::from_values(g, out).expect("residual is finite for finite input")
}

#[derive(Debug, Clone, Serialize)]
pub struct NewtonOutcome {
    #[serde(skip)]
    pub u: Field,
    pub iterations: usize,
    /// `|F|_∞` before each step and after the last.
    pub history: Vec<f64>,
    pub krylov_iterations: usize,
}

pub fn newton_solve(u0: &Field, eps: f64, model: &PotentialModel, cfg: &NewtonConfig) -> Result<NewtonOutcome> {
    cfg.validate()?;
    let g = u0.grid().clone();
    let v = model.sample(&g).values;
    let eps2 = eps * eps;
    let ln_floor = cfg.u_floor.ln();
    let h = g.h();
    let lap_diag = eps2 * 2.0 * g.dim() as f64 / (h * h);
    let max_krylov = (20 * g.len()).clamp(1000, 200_000);

    let mut u = u0.values.clone();
    let mut res = residual_with(&u, &v, eps2, ln_floor, &g);
    let mut rnorm = norm_linf(&res);
    let mut history = vec![rnorm];
    let mut krylov_iterations = 0;
    for it in 0..cfg.max_newton {
        if rnorm <= cfg.tol_newton {
            return Ok(NewtonOutcome { u: Field::from_values(&g, u)?, iterations: it, history, krylov_iterations });
        }
        let jd: Vec<f64> = u.iter().zip(&v).map(|(x, vx)| vx - df_exact(*x, ln_floor)).collect();
        let pre: Vec<f64> = jd.iter().map(|d| 1.0 / (d + lap_diag)).collect();
        let rhs: Vec<f64> = res.values.iter().map(|r| -r).collect();
        let out = gmres(
            |x, y| {
                g.laplacian_into(x, y);
                for i in 0..x.len() {
                    y[i] = -eps2 * y[i] + jd[i] * x[i];
                }
            },
            |x, y| {
                for i in 0..x.len() {
                    y[i] = pre[i] * x[i];
                }
            },
            &rhs,
            None,
            (0.1 * cfg.tol_newton / rnorm).clamp(1e-12, cfg.forcing),
            cfg.restart,
            max_krylov,
        );
        krylov_iterations += out.iterations;
        if !out.converged && out.residual > 0.5 {
            return Err(Error::LinearSolve { iterations: out.iterations, residual: out.residual });
        }
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..=cfg.max_halvings {
            let trial: Vec<f64> = u.iter().zip(&out.x).map(|(a, s)| a + lambda * s).collect();
            let tres = residual_with(&trial, &v, eps2, ln_floor, &g);
            let tnorm = norm_linf(&tres);
            if tnorm < rnorm || !cfg.damping {
                u = trial;
                res = tres;
                rnorm = tnorm;
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if !accepted {
            return Err(Error::OracleDivergence(format!(
                "line search stalled at iteration {it} with |F| = {rnorm:.3e}"
            )));
        }
        history.push(rnorm);
        if !rnorm.is_finite() {
            return Err(Error::OracleDivergence(format!("residual became non-finite at iteration {it}")));
        }
    }
    if rnorm <= cfg.tol_newton {
        return Ok(NewtonOutcome { u: Field::from_values(&g, u)?, iterations: cfg.max_newton, history, krylov_iterations });
    }
    Err(Error::OracleDivergence(format!(
        "no convergence in {} steps, |F| = {rnorm:.3e}",
        cfg.max_newton
    )))
}

/// Local maxima of `u` above a tenth of its maximum, as points.
pub fn concentration_set(u: &Field) -> Vec<Vec<f64>> {
    let top = norm_linf(u);
    local_maxima(u, 0.1 * top).into_iter().map(|k| u.grid().point(k)).collect()
}

/// Same number of maxima and a one-to-one match within `radius`.
pub fn same_concentration(a: &[Vec<f64>], b: &[Vec<f64>], radius: f64) -> bool {
    if a.len() != b.len() {
        return false;
    }
    let mut used = vec![false; b.len()];
    for p in a {
        let hit = b
            .iter()
            .enumerate()
            .find(|(j, q)| !used[*j] && crate::math::dist2(p, q).sqrt() <= radius);
        match hit {
            Some((j, _)) => used[j] = true,
            None => return false,
        }
    }
    true
}

/// The pieces of a solution the uniqueness probe needs, borrowed from a fresh
/// construction or from files on disk.
#[derive(Debug, Clone, Copy)]
pub struct SolutionView<'a> {
    pub u: &'a Field,
    pub peaks: &'a PeakSet,
    pub model: &'a PotentialModel,
}

impl<'a> From<&'a ConstructedSolution> for SolutionView<'a> {
    fn from(s: &'a ConstructedSolution) -> Self {
        Self { u: &s.u, peaks: &s.peaks, model: &s.model }
    }
}

#[derive(Debug, Clone)]
pub struct Perturbation {
    pub label: String,
    pub initial: Field,
}

/// The standard battery: amplitude `±10%` and `±20%`, every centre shifted by `0.3 eps`
/// along the first axis, and a seeded smooth random bump of sup `0.05 |G|_∞`.
pub fn standard_battery(base: SolutionView, seed: u64) -> Result<Vec<Perturbation>> {
    let g = base.u.grid();
    let mut out = Vec::new();
    for s in [-0.2, -0.1, 0.1, 0.2] {
        out.push(Perturbation { label: format!("amplitude{:+.0}%", 100.0 * s), initial: base.u.map(|v| (1.0 + s) * v) });
    }
    let mut shifted = base.peaks.y.clone();
    for y in &mut shifted {
        y[0] += 0.3 * base.peaks.eps;
    }
    let moved = PeakSet { y: shifted, ..base.peaks.clone() };
    out.push(Perturbation { label: "shift0.3eps".into(), initial: multi_peak_sum(&moved, base.model, g) });
    let ansatz = multi_peak_sum(base.peaks, base.model, g);
    let bump = random_bump(base.peaks, g, 0.05 * norm_linf(&ansatz), seed);
    out.push(Perturbation { label: format!("bump-seed{seed}"), initial: base.u.combine(1.0, &bump, 1.0)? });
    Ok(out)
}

/// A sum of four Gaussians of width `eps`, centred within `eps` of the peaks with random
/// signed weights, rescaled to the given sup.
pub fn random_bump(peaks: &PeakSet, grid: &Grid, sup: f64, seed: u64) -> Field {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps = peaks.eps;
    let terms: Vec<(Vec<f64>, f64)> = (0..4)
        .map(|m| {
            let y = &peaks.y[m % peaks.k()];
            let c: Vec<f64> = y.iter().map(|t| t + eps * rng.gen_range(-1.0..1.0)).collect();
            (c, rng.gen_range(-1.0..1.0))
        })
        .collect();
    let raw = Field::from_fn(grid, |x| {
        terms
            .iter()
            .map(|(c, w)| w * (-crate::math::dist2(x, c) / (2.0 * eps * eps)).exp())
            .sum()
    });
    let top = norm_linf(&raw);
    if top == 0.0 {
        return raw;
    }
    raw.map(|v| v * sup / top)
}

#[derive(Debug, Clone, Serialize)]
pub struct UniquenessRun {
    pub label: String,
    pub converged: bool,
    pub error: Option<String>,
    pub newton_iterations: usize,
    pub final_residual: f64,
    pub concentration: Vec<Vec<f64>>,
    #[serde(skip)]
    pub u: Option<Field>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PairKind {
    SameConcentration,
    DistinctConcentration,
}

#[derive(Debug, Clone, Serialize)]
pub struct PairGap {
    pub a: usize,
    pub b: usize,
    pub relative_gap: f64,
    pub kind: PairKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

#[derive(Debug, Clone, Serialize)]
pub struct UniquenessReport {
    pub runs: Vec<UniquenessRun>,
    pub pairs: Vec<PairGap>,
    pub threshold: f64,
    pub verdict: Verdict,
}

impl UniquenessReport {
    pub fn distinct_pairs(&self) -> usize {
        self.pairs.iter().filter(|p| p.kind == PairKind::DistinctConcentration).count()
    }

    pub fn max_same_gap(&self) -> f64 {
        self.pairs
            .iter()
            .filter(|p| p.kind == PairKind::SameConcentration)
            .map(|p| p.relative_gap)
            .fold(0.0, f64::max)
    }
}

/// Runs Newton from the constructed solution and from every perturbation. Runs whose
/// maxima sit at the same places (within `eps`) are compared; PASS when every such pair
/// agrees to `10 tol_newton` relative. Runs concentrating elsewhere are labelled
/// distinct-concentration and excluded from the verdict.
pub fn uniqueness_experiment(base: SolutionView, perturbations: &[Perturbation], cfg: &NewtonConfig) -> UniquenessReport {
    let eps = base.peaks.eps;
    let mut inits: Vec<(String, &Field)> = vec![("constructed".into(), base.u)];
    inits.extend(perturbations.iter().map(|p| (p.label.clone(), &p.initial)));
    let runs: Vec<UniquenessRun> = inits
        .par_iter()
        .map(|(label, u0)| match newton_solve(u0, eps, base.model, cfg) {
            Ok(out) => UniquenessRun {
                label: label.clone(),
                converged: true,
                error: None,
                newton_iterations: out.iterations,
                final_residual: *out.history.last().unwrap(),
                concentration: concentration_set(&out.u),
                u: Some(out.u),
            },
            Err(e) => UniquenessRun {
                label: label.clone(),
                converged: false,
                error: Some(e.to_string()),
                newton_iterations: 0,
                final_residual: f64::NAN,
                concentration: vec![],
                u: None,
            },
        })
        .collect();
    let threshold = 10.0 * cfg.tol_newton;
    let mut pairs = Vec::new();
    for a in 0..runs.len() {
        for b in a + 1..runs.len() {
            if let (Some(ua), Some(ub)) = (&runs[a].u, &runs[b].u) {
                let diff = ua.combine(1.0, ub, -1.0).expect("runs share a grid");
                let kind = if same_concentration(&runs[a].concentration, &runs[b].concentration, eps) {
                    PairKind::SameConcentration
                } else {
                    PairKind::DistinctConcentration
                };
                pairs.push(PairGap { a, b, relative_gap: norm_linf(&diff) / norm_linf(ua), kind });
            }
        }
    }
    let verdict = if runs.iter().any(|r| !r.converged) {
        Verdict::Inconclusive
    } else if pairs.iter().all(|p| p.kind == PairKind::DistinctConcentration || p.relative_gap <= threshold) {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    UniquenessReport { runs, pairs, threshold, verdict }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ansatz::gausson;

    #[test]
    fn residual_trivial_cases() {
        let g = Grid::new(2, 21, 1.0).unwrap();
        let one = PotentialModel::constant(1.0, 2).unwrap();
        let floor = NewtonConfig::default().u_floor;
        assert_eq!(norm_linf(&pde_residual(&Field::zeros(&g), 0.2, &one, floor)), 0.0);
        let r = pde_residual(&Field::constant(&g, 1.0), 0.2, &one, floor);
        for k in 0..g.len() {
            if g.depth(k) >= 1 {
                assert!((r.values[k] - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn config_invariants() {
        assert!(NewtonConfig::default().validate().is_ok());
        assert!(NewtonConfig { u_floor: 1e-10, ..Default::default() }.validate().is_err());
        assert!(NewtonConfig { tol_newton: 0.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn newton_from_the_exact_gausson_is_short() {
        let eps = 0.2;
        let g = Grid::for_peaks(2, eps, &[vec![0.0, 0.0]]).unwrap();
        let m = PotentialModel::constant(1.0, 2).unwrap();
        let u0 = gausson(eps, &[0.0, 0.0], 1.0, &g);
        let out = newton_solve(&u0, eps, &m, &NewtonConfig::default()).unwrap();
        assert!(out.iterations <= 3, "{:?}", out.history);
        let h = &out.history;
        assert!(h[2] <= 1.0 * h[1] * h[1], "{h:?}");
        let gap = norm_linf(&out.u.combine(1.0, &u0, -1.0).unwrap()) / norm_linf(&u0);
        assert!(gap < 0.05, "{gap}");
    }

    #[test]
    fn concentration_matching() {
        let a = vec![vec![0.0, 0.0], vec![1.0, 0.0]];
        let b = vec![vec![1.01, 0.0], vec![0.0, 0.02]];
        assert!(same_concentration(&a, &b, 0.1));
        assert!(!same_concentration(&a, &b[..1], 0.1));
        assert!(!same_concentration(&a, &[vec![-1.0, 0.0], vec![1.0, 0.0]], 0.1));
    }

    #[test]
    fn bump_is_seeded_and_scaled() {
        let g = Grid::new(2, 41, 1.0).unwrap();
        let p = PeakSet::at_critical_points(0.2, vec![vec![0.0, 0.0]], 0.5).unwrap();
        let a = random_bump(&p, &g, 0.3, 7);
        let b = random_bump(&p, &g, 0.3, 7);
        assert_eq!(a, b);
        assert!((norm_linf(&a) - 0.3).abs() < 1e-15);
        assert_ne!(a, random_bump(&p, &g, 0.3, 8));
    }
}
