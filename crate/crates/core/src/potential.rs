//! Closed-form potentials `V(x)` with analytic derivatives, and a Newton search for
//! their non-degenerate critical points.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, SeedFailure};
use crate::grid::{Field, Grid};
use crate::math::dist2;

pub const TOL_CRIT: f64 = 1e-10;
pub const TOL_DEG: f64 = 1e-8;
pub const DEDUP_RADIUS: f64 = 1e-6;
const MAX_NEWTON: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    /// `params = [c]`, `V = c`.
    Constant,
    /// `params = [v0, ξ_1, .., ξ_N]`, `V = v0 + |x - ξ|^2`.
    QuadraticWell,
    /// `params = [c, a, s, b]`, `V = c + a (x_1^2 - s^2)^2 + b Σ_{i>=2} x_i^2`.
    MultiWellPolynomial,
    /// `params = [c, A_1, w_1, p_1.., A_2, w_2, p_2.., ..]`,
    /// `V = c - Σ_m A_m exp(-|x - p_m|^2 / w_m^2)`.
    GaussianBumps,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Constant => "constant",
            Family::QuadraticWell => "quadratic-well",
            Family::MultiWellPolynomial => "multi-well-polynomial",
            Family::GaussianBumps => "gaussian-bumps",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PotentialModel {
    family: Family,
    params: Vec<f64>,
    dim: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Classification {
    Min,
    Max,
    Saddle,
}

#[derive(Debug, Clone)]
pub struct CriticalPoint {
    pub location: Vec<f64>,
    pub hessian: DMatrix<f64>,
    pub classification: Classification,
}

/// Outcome of [`PotentialModel::find_critical_points`]: accepted points plus the seeds
/// that were flagged, by seed index.
#[derive(Debug, Clone)]
pub struct CriticalSearch {
    pub points: Vec<CriticalPoint>,
    pub rejected: Vec<(usize, SeedFailure)>,
}

impl PotentialModel {
    pub fn new(family: Family, params: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::ModelDomain("dimension must be positive".into()));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::ModelDomain("non-finite coefficient".into()));
        }
        let ok = match family {
            Family::Constant => params.len() == 1,
            Family::QuadraticWell => params.len() == 1 + dim,
            Family::MultiWellPolynomial => params.len() == 4,
            Family::GaussianBumps => {
                params.len() > 1 && (params.len() - 1) % (2 + dim) == 0
            }
        };
        if !ok {
            return Err(Error::ModelDomain(format!(
                "{} in dimension {dim} does not accept {} coefficients",
                family.name(),
                params.len()
            )));
        }
        if family == Family::GaussianBumps {
            for bump in params[1..].chunks(2 + dim) {
                if bump[1] <= 0.0 {
                    return Err(Error::ModelDomain("bump width must be positive".into()));
                }
            }
        }
        Ok(Self { family, params, dim })
    }

    pub fn constant(c: f64, dim: usize) -> Result<Self> {
        Self::new(Family::Constant, vec![c], dim)
    }

    pub fn quadratic_well(v0: f64, center: &[f64]) -> Result<Self> {
        let mut p = vec![v0];
        p.extend_from_slice(center);
        Self::new(Family::QuadraticWell, p, center.len())
    }

    /// `c + a (x_1^2 - s^2)^2 + b Σ_{i>=2} x_i^2`.
    pub fn double_well(c: f64, a: f64, s: f64, b: f64, dim: usize) -> Result<Self> {
        Self::new(Family::MultiWellPolynomial, vec![c, a, s, b], dim)
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn bumps(&self) -> impl Iterator<Item = (f64, f64, &[f64])> {
        self.params[1..]
            .chunks(2 + self.dim)
            .map(|b| (b[0], b[1], &b[2..]))
    }

    /// `V(x)` without the finiteness check. Hot loops use this.
    pub fn value(&self, x: &[f64]) -> f64 {
        let p = &self.params;
        match self.family {
            Family::Constant => p[0],
            Family::QuadraticWell => p[0] + dist2(x, &p[1..]),
            Family::MultiWellPolynomial => {
                let q = x[0] * x[0] - p[2] * p[2];
                p[0] + p[1] * q * q + p[3] * x[1..].iter().map(|t| t * t).sum::<f64>()
            }
            Family::GaussianBumps => {
                p[0] - self
                    .bumps()
                    .map(|(a, w, c)| a * (-dist2(x, c) / (w * w)).exp())
                    .sum::<f64>()
            }
        }
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        let v = self.value(x);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::ModelDomain(format!("V({x:?}) is not finite")))
        }
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::ModelDomain(format!(
                "point has dimension {}, model has {}",
                x.len(),
                self.dim
            )));
        }
        if x.iter().any(|t| !t.is_finite()) {
            return Err(Error::ModelDomain("non-finite point".into()));
        }
        Ok(())
    }

    pub fn grad(&self, x: &[f64]) -> Vec<f64> {
        let p = &self.params;
        let n = self.dim;
        match self.family {
            Family::Constant => vec![0.0; n],
            Family::QuadraticWell => x.iter().zip(&p[1..]).map(|(a, c)| 2.0 * (a - c)).collect(),
            Family::MultiWellPolynomial => {
                let mut g: Vec<f64> = x.iter().map(|t| 2.0 * p[3] * t).collect();
                g[0] = 4.0 * p[1] * x[0] * (x[0] * x[0] - p[2] * p[2]);
                g
            }
            Family::GaussianBumps => {
                let mut g = vec![0.0; n];
                for (a, w, c) in self.bumps() {
                    let e = a * (-dist2(x, c) / (w * w)).exp() * 2.0 / (w * w);
                    for i in 0..n {
                        g[i] += e * (x[i] - c[i]);
                    }
                }
                g
            }
        }
    }

    pub fn hess(&self, x: &[f64]) -> DMatrix<f64> {
        let p = &self.params;
        let n = self.dim;
        match self.family {
            Family::Constant => DMatrix::zeros(n, n),
            Family::QuadraticWell => DMatrix::identity(n, n) * 2.0,
            Family::MultiWellPolynomial => {
                let mut h = DMatrix::identity(n, n) * (2.0 * p[3]);
                h[(0, 0)] = 4.0 * p[1] * (3.0 * x[0] * x[0] - p[2] * p[2]);
                h
            }
            Family::GaussianBumps => {
                let mut h = DMatrix::zeros(n, n);
                for (a, w, c) in self.bumps() {
                    let w2 = w * w;
                    let e = a * (-dist2(x, c) / w2).exp();
                    for i in 0..n {
                        for l in 0..n {
                            let delta = if i == l { 2.0 / w2 } else { 0.0 };
                            h[(i, l)] += e * (delta - 4.0 * (x[i] - c[i]) * (x[l] - c[l]) / (w2 * w2));
                        }
                    }
                }
                h
            }
        }
    }

    /// Samples `V` on every grid node.
    pub fn sample(&self, grid: &Grid) -> Field {
        Field::from_fn(grid, |x| self.value(x))
    }

    /// Checks `0 < inf V <= sup V < inf` on a `samples^N` lattice covering the box
    /// `[-half_width, half_width]^N`. Returns `(inf, sup)` over the samples.
    pub fn validate_on_box(&self, half_width: f64, samples: usize) -> Result<(f64, f64)> {
        let samples = samples.max(2);
        let total = samples.pow(self.dim as u32);
        let mut x = vec![0.0; self.dim];
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for flat in 0..total {
            let mut r = flat;
            for xi in x.iter_mut() {
                let k = r % samples;
                r /= samples;
                *xi = -half_width + 2.0 * half_width * k as f64 / (samples - 1) as f64;
            }
            let v = self.value(&x);
            if !v.is_finite() {
                return Err(Error::ModelDomain(format!("V({x:?}) is not finite")));
            }
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if lo <= 0.0 {
            return Err(Error::ModelDomain(format!(
                "inf V = {lo:.6e} is not positive on the box"
            )));
        }
        Ok((lo, hi))
    }

    /// Newton on `∇V = 0` from every seed; deduplicates and classifies the converged
    /// points and flags the rest. Fails only when no seed produced an acceptable point.
    pub fn find_critical_points(&self, seeds: &[Vec<f64>]) -> Result<CriticalSearch> {
        let mut points: Vec<CriticalPoint> = Vec::new();
        let mut rejected = Vec::new();
        for (s, seed) in seeds.iter().enumerate() {
            self.check_point(seed)?;
            match self.newton_critical(seed) {
                Ok(cp) => {
                    let dup = points
                        .iter()
                        .any(|p| dist2(&p.location, &cp.location).sqrt() < DEDUP_RADIUS);
                    if !dup {
                        points.push(cp);
                    }
                }
                Err(f) => rejected.push((s, f)),
            }
        }
        if points.is_empty() {
            return Err(Error::NoCriticalPoints {
                failures: rejected.into_iter().map(|(_, f)| f).collect(),
            });
        }
        Ok(CriticalSearch { points, rejected })
    }

    fn newton_critical(&self, seed: &[f64]) -> std::result::Result<CriticalPoint, SeedFailure> {
        let n = self.dim;
        let mut x = seed.to_vec();
        let mut gnorm = f64::INFINITY;
        for _ in 0..=MAX_NEWTON {
            let g = self.grad(&x);
            gnorm = g.iter().map(|t| t * t).sum::<f64>().sqrt();
            let h = self.hess(&x);
            if gnorm <= TOL_CRIT {
                let det = h.determinant();
                if det.abs() <= TOL_DEG {
                    return Err(SeedFailure::Degenerate { location: x, det });
                }
                let eig = h.clone().symmetric_eigen().eigenvalues;
                let classification = if eig.iter().all(|&e| e > 0.0) {
                    Classification::Min
                } else if eig.iter().all(|&e| e < 0.0) {
                    Classification::Max
                } else {
                    Classification::Saddle
                };
                return Ok(CriticalPoint { location: x, hessian: h, classification });
            }
            let rhs = DVector::from_vec(g);
            let Some(step) = h.lu().solve(&rhs) else {
                break;
            };
            for i in 0..n {
                x[i] -= step[i];
            }
            if x.iter().any(|t| !t.is_finite()) {
                break;
            }
        }
        Err(SeedFailure::NotConverged { residual: gnorm })
    }
}
