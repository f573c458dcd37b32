//! Uniform tensor grids on `[-L, L]^N`, grid functions, finite-difference calculus and
//! the norms used throughout the construction.
//!
//! Storage is row-major: the last axis varies fastest. Values outside the box are
//! treated as zero (homogeneous Dirichlet ghosts); every node of the box is an unknown.

use std::sync::Arc;

use serde::Serialize;

use crate::ansatz::PeakSet;
use crate::error::{Error, Result};
use crate::math::{dist2, logsumexp};
use crate::potential::PotentialModel;

/// Relative tail level the box margin is sized for.
pub const TAIL_LEVEL: f64 = 1e-14;
/// Default ceiling on the number of grid nodes.
pub const MAX_POINTS: usize = 1 << 24;
/// Points per peak width used by [`Grid::for_peaks`]: `h <= eps / 6`.
pub const POINTS_PER_EPS: f64 = 6.0;

#[derive(Debug, Clone)]
pub struct Grid {
    dim: usize,
    n: usize,
    half_width: f64,
    coords: Arc<Vec<f64>>,
    weights: Arc<Vec<f64>>,
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.n == other.n && self.half_width == other.half_width
    }
}

impl Grid {
    pub fn new(dim: usize, n: usize, half_width: f64) -> Result<Self> {
        Self::with_budget(dim, n, half_width, MAX_POINTS)
    }

    pub fn with_budget(dim: usize, n: usize, half_width: f64, max_points: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidGrid("dimension must be positive".into()));
        }
        if n < 9 || n % 2 == 0 {
            return Err(Error::InvalidGrid(format!("n = {n} must be odd and at least 9")));
        }
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(Error::InvalidGrid(format!("half width {half_width} must be positive")));
        }
        let total = (n as u128).checked_pow(dim as u32).unwrap_or(u128::MAX);
        if total > max_points as u128 {
            return Err(Error::InvalidGrid(format!(
                "{n}^{dim} nodes exceed the budget of {max_points}"
            )));
        }
        let h = 2.0 * half_width / (n - 1) as f64;
        let coords: Vec<f64> = (0..n).map(|k| -half_width + k as f64 * h).collect();
        let w1: Vec<f64> = (0..n)
            .map(|k| if k == 0 || k == n - 1 { 0.5 * h } else { h })
            .collect();
        let total = total as usize;
        let mut weights = vec![1.0; total];
        let mut stride = 1;
        for _ in 0..dim {
            for (flat, w) in weights.iter_mut().enumerate() {
                *w *= w1[(flat / stride) % n];
            }
            stride *= n;
        }
        Ok(Self {
            dim,
            n,
            half_width,
            coords: Arc::new(coords),
            weights: Arc::new(weights),
        })
    }

    /// The default grid for a run at scale `eps` around the critical points `xis`:
    /// `L = max_j |ξ_j|_inf + max(1, eps sqrt(2 ln(1/TAIL_LEVEL)))` and the smallest odd
    /// `n` with `h <= eps / 6`.
    pub fn for_peaks(dim: usize, eps: f64, xis: &[Vec<f64>]) -> Result<Self> {
        if !(eps > 0.0) {
            return Err(Error::InvalidGrid(format!("eps = {eps} must be positive")));
        }
        let reach = xis
            .iter()
            .flat_map(|x| x.iter().map(|t| t.abs()))
            .fold(0.0, f64::max);
        let margin = (eps * (2.0 * (1.0 / TAIL_LEVEL).ln()).sqrt()).max(1.0);
        let half_width = reach + margin;
        let mut cells = (2.0 * half_width * POINTS_PER_EPS / eps).ceil() as usize;
        if cells % 2 == 1 {
            cells += 1;
        }
        Self::new(dim, (cells + 1).max(9), half_width)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn h(&self) -> f64 {
        self.coords[1] - self.coords[0]
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.n.pow((self.dim - 1 - axis) as u32)
    }

    pub fn axis_index(&self, flat: usize, axis: usize) -> usize {
        (flat / self.stride(axis)) % self.n
    }

    /// Writes the coordinates of node `flat` into `out`.
    pub fn point_into(&self, flat: usize, out: &mut [f64]) {
        let mut r = flat;
        for axis in (0..self.dim).rev() {
            out[axis] = self.coords[r % self.n];
            r /= self.n;
        }
    }

    pub fn point(&self, flat: usize) -> Vec<f64> {
        let mut p = vec![0.0; self.dim];
        self.point_into(flat, &mut p);
        p
    }

    /// Number of cells between node `flat` and the nearest face of the box.
    pub fn depth(&self, flat: usize) -> usize {
        (0..self.dim)
            .map(|a| {
                let k = self.axis_index(flat, a);
                k.min(self.n - 1 - k)
            })
            .min()
            .unwrap_or(0)
    }

    /// Nearest node to `x`, if `x` lies in the box.
    pub fn nearest(&self, x: &[f64]) -> Option<usize> {
        let h = self.h();
        let mut flat = 0;
        for &t in x {
            let k = ((t + self.half_width) / h).round();
            if k < 0.0 || k > (self.n - 1) as f64 {
                return None;
            }
            flat = flat * self.n + k as usize;
        }
        Some(flat)
    }

    /// Multilinear interpolation of grid values at `x`; zero outside the box.
    pub fn interpolate(&self, values: &[f64], x: &[f64]) -> f64 {
        let h = self.h();
        let mut base = 0;
        let mut frac = [0.0; 8];
        for (a, &t) in x.iter().enumerate() {
            let s = (t + self.half_width) / h;
            if !(0.0..=(self.n - 1) as f64).contains(&s) {
                return 0.0;
            }
            let k = (s.floor() as usize).min(self.n - 2);
            frac[a] = s - k as f64;
            base = base * self.n + k;
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << self.dim) {
            let mut w = 1.0;
            let mut offset = 0;
            for a in 0..self.dim {
                let up = (corner >> a) & 1 == 1;
                w *= if up { frac[a] } else { 1.0 - frac[a] };
                if up {
                    offset += self.stride(a);
                }
            }
            if w != 0.0 {
                acc += w * values[base + offset];
            }
        }
        acc
    }

    /// Trapezoid-rule integral of the grid values.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        self.weights.iter().zip(values).map(|(w, v)| w * v).sum()
    }

    /// `out = Δ_h u` with the `2N+1` point stencil and zero ghosts.
    pub fn laplacian_into(&self, u: &[f64], out: &mut [f64]) {
        let n = self.n;
        let inv_h2 = 1.0 / (self.h() * self.h());
        for (o, &v) in out.iter_mut().zip(u) {
            *o = -2.0 * self.dim as f64 * v * inv_h2;
        }
        for axis in 0..self.dim {
            let s = self.stride(axis);
            for flat in 0..u.len() {
                let k = (flat / s) % n;
                let mut acc = 0.0;
                if k > 0 {
                    acc += u[flat - s];
                }
                if k + 1 < n {
                    acc += u[flat + s];
                }
                out[flat] += acc * inv_h2;
            }
        }
    }

    /// `out = D_axis u`: central differences inside, second-order one-sided at the faces.
    pub fn derivative_into(&self, u: &[f64], axis: usize, out: &mut [f64]) {
        let n = self.n;
        let s = self.stride(axis);
        let inv = 0.5 / self.h();
        for flat in 0..u.len() {
            let k = (flat / s) % n;
            out[flat] = if k == 0 {
                (-3.0 * u[flat] + 4.0 * u[flat + s] - u[flat + 2 * s]) * inv
            } else if k == n - 1 {
                (3.0 * u[flat] - 4.0 * u[flat - s] + u[flat - 2 * s]) * inv
            } else {
                (u[flat + s] - u[flat - s]) * inv
            };
        }
    }

    /// `out += D_axis^T v`, the exact transpose of [`Grid::derivative_into`].
    pub fn derivative_transpose_add(&self, v: &[f64], axis: usize, out: &mut [f64]) {
        let n = self.n;
        let s = self.stride(axis);
        let inv = 0.5 / self.h();
        for flat in 0..v.len() {
            let k = (flat / s) % n;
            let c = v[flat] * inv;
            if k == 0 {
                out[flat] -= 3.0 * c;
                out[flat + s] += 4.0 * c;
                out[flat + 2 * s] -= c;
            } else if k == n - 1 {
                out[flat] += 3.0 * c;
                out[flat - s] -= 4.0 * c;
                out[flat - 2 * s] += c;
            } else {
                out[flat + s] += c;
                out[flat - s] -= c;
            }
        }
    }
}

/// A real grid function.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Grid,
    pub values: Vec<f64>,
}

impl Field {
    pub fn zeros(grid: &Grid) -> Self {
        Self { grid: grid.clone(), values: vec![0.0; grid.len()] }
    }

    pub fn constant(grid: &Grid, c: f64) -> Self {
        Self { grid: grid.clone(), values: vec![c; grid.len()] }
    }

    pub fn from_values(grid: &Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidGrid("field values must be finite".into()));
        }
        Ok(Self { grid: grid.clone(), values })
    }

    pub fn from_fn(grid: &Grid, mut f: impl FnMut(&[f64]) -> f64) -> Self {
        let mut p = vec![0.0; grid.dim()];
        let values = (0..grid.len())
            .map(|flat| {
                grid.point_into(flat, &mut p);
                f(&p)
            })
            .collect();
        Self { grid: grid.clone(), values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn same_grid(&self, other: &Field) -> Result<()> {
        if self.grid == other.grid {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field { grid: self.grid.clone(), values: self.values.iter().map(|&v| f(v)).collect() }
    }

    /// `a * self + b * other`
    pub fn combine(&self, a: f64, other: &Field, b: f64) -> Result<Field> {
        self.same_grid(other)?;
        let values = self.values.iter().zip(&other.values).map(|(x, y)| a * x + b * y).collect();
        Ok(Field { grid: self.grid.clone(), values })
    }

    pub fn integral(&self) -> f64 {
        self.grid.integrate(&self.values)
    }

    pub fn interpolate(&self, x: &[f64]) -> f64 {
        self.grid.interpolate(&self.values, x)
    }
}

pub fn laplacian(f: &Field) -> Field {
    let mut out = Field::zeros(f.grid());
    f.grid().laplacian_into(&f.values, &mut out.values);
    out
}

pub fn derivative(f: &Field, axis: usize) -> Field {
    let mut out = Field::zeros(f.grid());
    f.grid().derivative_into(&f.values, axis, &mut out.values);
    out
}

pub fn norm_linf(f: &Field) -> f64 {
    f.values.iter().fold(0.0, |m, v| m.max(v.abs()))
}

pub fn norm_l2(f: &Field) -> f64 {
    f.grid.weights().iter().zip(&f.values).map(|(w, v)| w * v * v).sum::<f64>().sqrt()
}

/// The discrete `eps`-geometry `<u, v>_eps = ∫ eps^2 ∇u·∇v + (V + 1) u v`, stored as
/// the quadrature weights it needs so that repeated pairings are cheap.
#[derive(Debug, Clone)]
pub struct EpsMetric {
    grid: Grid,
    eps2: f64,
    mass: Vec<f64>,
}

impl EpsMetric {
    pub fn new(grid: &Grid, eps: f64, model: &PotentialModel) -> Self {
        let v = model.sample(grid);
        let mass = grid
            .weights()
            .iter()
            .zip(&v.values)
            .map(|(w, vx)| w * (vx + 1.0))
            .collect();
        Self { grid: grid.clone(), eps2: eps * eps, mass }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        let mut acc: f64 = self.mass.iter().zip(u.iter().zip(v)).map(|(m, (a, b))| m * a * b).sum();
        let mut du = vec![0.0; u.len()];
        let mut dv = vec![0.0; u.len()];
        let w = self.grid.weights();
        for axis in 0..self.grid.dim() {
            self.grid.derivative_into(u, axis, &mut du);
            self.grid.derivative_into(v, axis, &mut dv);
            acc += self.eps2 * du.iter().zip(&dv).zip(w).map(|((a, b), w)| w * a * b).sum::<f64>();
        }
        acc
    }

    pub fn norm(&self, u: &[f64]) -> f64 {
        self.inner(u, u).max(0.0).sqrt()
    }

    /// `M u`, the matrix of the pairing: `<u, v>_eps = v · M u`.
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = self.mass.iter().zip(u).map(|(m, a)| m * a).collect();
        let mut du = vec![0.0; u.len()];
        let w = self.grid.weights();
        for axis in 0..self.grid.dim() {
            self.grid.derivative_into(u, axis, &mut du);
            for (d, w) in du.iter_mut().zip(w) {
                *d *= self.eps2 * w;
            }
            self.grid.derivative_transpose_add(&du, axis, &mut out);
        }
        out
    }
}

pub fn inner_eps(u: &Field, v: &Field, eps: f64, model: &PotentialModel) -> Result<f64> {
    u.same_grid(v)?;
    Ok(EpsMetric::new(u.grid(), eps, model).inner(&u.values, &v.values))
}

/// `log Σ_j exp(-|x - y_j|^2 / (2 eps^2))`.
pub fn log_envelope(x: &[f64], eps: f64, centers: &[Vec<f64>]) -> f64 {
    let ex: Vec<f64> = centers.iter().map(|y| -dist2(x, y) / (2.0 * eps * eps)).collect();
    logsumexp(&ex)
}

/// `sup |φ| / Σ_j exp(-|x - y_j|^2 / (2 eps^2))` over the whole grid, in log space.
pub fn norm_star(phi: &Field, peaks: &PeakSet) -> Result<f64> {
    let grid = phi.grid();
    let mut p = vec![0.0; grid.dim()];
    let mut best = 0.0f64;
    for (flat, &v) in phi.values.iter().enumerate() {
        if v == 0.0 {
            continue;
        }
        grid.point_into(flat, &mut p);
        let le = log_envelope(&p, peaks.eps, &peaks.y);
        if le < -700.0 {
            return Err(Error::StarNormOverflow { index: flat, point: p });
        }
        best = best.max((v.abs().ln() - le).exp());
    }
    Ok(best)
}

/// The star norm restricted to the peak cores `∪_j B_{R eps}(y_j)`.
pub fn norm_star_core(phi: &Field, peaks: &PeakSet, core_radius: f64) -> f64 {
    let grid = phi.grid();
    let r2 = (core_radius * peaks.eps).powi(2);
    let mut p = vec![0.0; grid.dim()];
    let mut best = 0.0f64;
    for (flat, &v) in phi.values.iter().enumerate() {
        if v == 0.0 {
            continue;
        }
        grid.point_into(flat, &mut p);
        if peaks.y.iter().all(|y| dist2(&p, y) > r2) {
            continue;
        }
        let le = log_envelope(&p, peaks.eps, &peaks.y);
        best = best.max((v.abs().ln() - le).exp());
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormPair {
    pub eps_norm: f64,
    pub star_norm: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::convergence_rate;
    use std::f64::consts::PI;

    #[test]
    fn grid_rules() {
        assert!(Grid::new(2, 8, 1.0).is_err());
        assert!(Grid::new(2, 7, 1.0).is_err());
        assert!(Grid::new(2, 9, 0.0).is_err());
        assert!(Grid::with_budget(3, 101, 1.0, 1000).is_err());
        let g = Grid::for_peaks(2, 0.2, &[vec![0.0, 0.0]]).unwrap();
        assert!(g.n() % 2 == 1 && g.h() <= 0.2 / 6.0 + 1e-15);
        assert!((g.half_width() - 1.6062).abs() < 1e-3);
    }

    #[test]
    fn point_and_nearest_round_trip() {
        let g = Grid::new(3, 11, 2.0).unwrap();
        for flat in [0, 17, 600, g.len() - 1] {
            assert_eq!(g.nearest(&g.point(flat)), Some(flat));
        }
        assert_eq!(g.nearest(&[3.0, 0.0, 0.0]), None);
    }

    #[test]
    fn laplacian_of_constant_vanishes_away_from_faces() {
        let g = Grid::new(2, 15, 1.0).unwrap();
        let d = laplacian(&Field::constant(&g, 3.0));
        for flat in 0..g.len() {
            if g.depth(flat) >= 1 {
                assert!(d.values[flat].abs() < 1e-9);
            }
        }
    }

    #[test]
    fn laplacian_exact_on_quadratics() {
        let g = Grid::new(2, 21, 1.0).unwrap();
        let d = laplacian(&Field::from_fn(&g, |x| x[0] * x[0]));
        for flat in 0..g.len() {
            if g.depth(flat) >= 1 {
                assert!((d.values[flat] - 2.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn laplacian_of_gaussian_converges_at_second_order() {
        let mut hs = vec![];
        let mut errs = vec![];
        for n in [41, 81, 161] {
            let g = Grid::new(2, n, 6.0).unwrap();
            let u = Field::from_fn(&g, |x| (1.5 - 0.5 * (x[0] * x[0] + x[1] * x[1])).exp());
            let d = laplacian(&u);
            let mut e = 0.0f64;
            let mut p = [0.0; 2];
            for flat in 0..g.len() {
                if g.depth(flat) >= 1 {
                    g.point_into(flat, &mut p);
                    let r2 = p[0] * p[0] + p[1] * p[1];
                    e = e.max((d.values[flat] - (r2 - 2.0) * u.values[flat]).abs());
                }
            }
            hs.push(g.h());
            errs.push(e);
        }
        assert!(convergence_rate(&hs, &errs) >= 1.9);
    }

    #[test]
    fn derivative_transpose_is_adjoint() {
        let g = Grid::new(2, 9, 1.0).unwrap();
        let u: Vec<f64> = (0..g.len()).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        let v: Vec<f64> = (0..g.len()).map(|i| ((i * 13) % 7) as f64 - 3.0).collect();
        for axis in 0..2 {
            let mut du = vec![0.0; g.len()];
            g.derivative_into(&u, axis, &mut du);
            let mut dtv = vec![0.0; g.len()];
            g.derivative_transpose_add(&v, axis, &mut dtv);
            let a: f64 = du.iter().zip(&v).map(|(x, y)| x * y).sum();
            let b: f64 = u.iter().zip(&dtv).map(|(x, y)| x * y).sum();
            assert!((a - b).abs() < 1e-9 * a.abs().max(1.0));
        }
    }

    #[test]
    fn norms_of_simple_fields() {
        let g = Grid::new(2, 11, 1.5).unwrap();
        assert_eq!(norm_linf(&Field::zeros(&g)), 0.0);
        assert_eq!(norm_l2(&Field::zeros(&g)), 0.0);
        let c = Field::constant(&g, -2.0);
        assert_eq!(norm_linf(&c), 2.0);
        assert!((norm_l2(&c) - 2.0 * 3.0).abs() < 1e-12);
        let g = Grid::new(2, 121, 8.0).unwrap();
        let gauss = Field::from_fn(&g, |x| (-0.5 * (x[0] * x[0] + x[1] * x[1])).exp());
        assert!((norm_l2(&gauss).powi(2) - PI).abs() < 1e-8);
    }

    #[test]
    fn metric_apply_matches_inner() {
        let g = Grid::new(2, 13, 1.0).unwrap();
        let m = PotentialModel::quadratic_well(1.0, &[0.1, 0.0]).unwrap();
        let met = EpsMetric::new(&g, 0.3, &m);
        let u: Vec<f64> = (0..g.len()).map(|i| (i as f64 * 0.37).sin()).collect();
        let v: Vec<f64> = (0..g.len()).map(|i| (i as f64 * 0.11).cos()).collect();
        let mu = met.apply(&u);
        let a: f64 = mu.iter().zip(&v).map(|(x, y)| x * y).sum();
        assert!((a - met.inner(&u, &v)).abs() < 1e-10 * a.abs().max(1.0));
    }

    #[test]
    fn interpolation_reproduces_bilinear_functions() {
        let g = Grid::new(2, 11, 1.0).unwrap();
        let f = Field::from_fn(&g, |x| 1.0 + 2.0 * x[0] - x[1] + 0.5 * x[0] * x[1]);
        let x = [0.123, -0.456];
        let exact = 1.0 + 2.0 * x[0] - x[1] + 0.5 * x[0] * x[1];
        assert!((f.interpolate(&x) - exact).abs() < 1e-12);
        assert_eq!(f.interpolate(&[1.5, 0.0]), 0.0);
    }
}
