//! Independent checks on a computed field: local Pohozaev balances around each peak,
//! tail decay, the logarithmic Sobolev inequality, and the spectrum of the limiting
//! linearised operator.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::ansatz::{limiting_profile, PeakSet};
use crate::error::{Error, Result};
use crate::grid::{derivative, Field, Grid};
use crate::math::{convergence_rate, dist2};
use crate::nonlinearity::LOG_FLOOR;
use crate::potential::PotentialModel;

/// Angular quadrature nodes per angle on the sphere.
pub const SPHERE_NODES: usize = 64;

#[derive(Debug, Clone, Serialize)]
pub struct PohozaevEntry {
    pub peak: usize,
    pub axis: usize,
    pub interior: f64,
    pub boundary: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PohozaevReport {
    pub delta: f64,
    pub entries: Vec<PohozaevEntry>,
}

impl PohozaevReport {
    /// `residual <= tol * max(|interior|, eps^{N+1})` for every entry.
    pub fn passes(&self, tol: f64, eps: f64, dim: usize) -> bool {
        let floor = eps.powi(dim as i32 + 1);
        self.entries.iter().all(|e| e.residual <= tol * e.interior.abs().max(floor))
    }

    /// Largest `residual / max(|interior|, eps^{N+1})`.
    pub fn worst_ratio(&self, eps: f64, dim: usize) -> f64 {
        let floor = eps.powi(dim as i32 + 1);
        self.entries.iter().map(|e| e.residual / e.interior.abs().max(floor)).fold(0.0, f64::max)
    }

    pub fn write_csv(&self, path: &Path, tag: &str) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "config_hash,peak,axis,delta,interior,boundary,residual")?;
        for e in &self.entries {
            writeln!(
                f,
                "{tag},{},{},{:.6e},{:.12e},{:.12e},{:.12e}",
                e.peak, e.axis, self.delta, e.interior, e.boundary, e.residual
            )?;
        }
        f.flush()?;
        Ok(())
    }
}

/// `0.8 * min(min_{i != j} |ξ_i - ξ_j| / 2, distance from the centres to the box faces)`.
pub fn default_delta(peaks: &PeakSet, grid: &Grid) -> f64 {
    let mut d = f64::INFINITY;
    for (i, a) in peaks.xi.iter().enumerate() {
        for b in &peaks.xi[i + 1..] {
            d = d.min(0.5 * dist2(a, b).sqrt());
        }
    }
    for y in &peaks.y {
        for &t in y {
            d = d.min(grid.half_width() - t.abs());
        }
    }
    0.8 * d
}

/// Unit sphere nodes with their outward normals and surface weights, scaled to radius `r`.
fn sphere(dim: usize, r: f64) -> Vec<(Vec<f64>, f64)> {
    let m = SPHERE_NODES;
    match dim {
        1 => vec![(vec![1.0], 1.0), (vec![-1.0], 1.0)],
        2 => (0..m)
            .map(|k| {
                let t = 2.0 * PI * (k as f64 + 0.5) / m as f64;
                (vec![t.cos(), t.sin()], r * 2.0 * PI / m as f64)
            })
            .collect(),
        _ => {
            let mut out = Vec::with_capacity(m * m);
            for a in 0..m {
                let th = PI * (a as f64 + 0.5) / m as f64;
                for b in 0..m {
                    let ph = 2.0 * PI * (b as f64 + 0.5) / m as f64;
                    let w = r * r * th.sin() * (PI / m as f64) * (2.0 * PI / m as f64);
                    out.push((vec![th.sin() * ph.cos(), th.sin() * ph.sin(), th.cos()], w));
                }
            }
            out
        }
    }
}

/// Both sides of the local Pohozaev identity on `B_delta(y_j)` for every peak and axis:
/// `∫ ∂_i V u^2 = ∫_∂ [eps^2 (|∇u|^2 ν_i - 2 ∂_ν u ∂_i u) + (V + 1) u^2 ν_i] - ∫_∂ ν_i u^2 log u^2`.
pub fn pohozaev_residual(u: &Field, peaks: &PeakSet, model: &PotentialModel, delta: Option<f64>) -> Result<PohozaevReport> {
    let g = u.grid();
    if g.dim() > 3 {
        return Err(Error::Geometry("surface quadrature is implemented for N <= 3".into()));
    }
    let delta = delta.unwrap_or_else(|| default_delta(peaks, g));
    let eps2 = peaks.eps * peaks.eps;
    let margin = 2.0 * g.h();
    for (j, y) in peaks.y.iter().enumerate() {
        if !(delta > 0.0) || y.iter().any(|t| t.abs() + delta > g.half_width() - margin) {
            return Err(Error::Geometry(format!(
                "ball of radius {delta:.4} around peak {j} does not fit inside the box"
            )));
        }
    }
    let grads: Vec<Field> = (0..g.dim()).map(|a| derivative(u, a)).collect();
    let nodes = sphere(g.dim(), delta);
    let mut entries = Vec::new();
    let mut x = vec![0.0; g.dim()];
    for (j, y) in peaks.y.iter().enumerate() {
        for i in 0..g.dim() {
            let mut interior = 0.0;
            for flat in 0..g.len() {
                g.point_into(flat, &mut x);
                if dist2(&x, y) <= delta * delta {
                    let v = u.values[flat];
                    interior += g.weights()[flat] * model.grad(&x)[i] * v * v;
                }
            }
            let mut boundary = 0.0;
            for (nu, w) in &nodes {
                for a in 0..g.dim() {
                    x[a] = y[a] + delta * nu[a];
                }
                let v = u.interpolate(&x);
                let du: Vec<f64> = grads.iter().map(|d| d.interpolate(&x)).collect();
                let grad2: f64 = du.iter().map(|t| t * t).sum();
                let dnu: f64 = du.iter().zip(nu).map(|(a, b)| a * b).sum();
                let log_u2 = 2.0 * v.abs().ln().max(LOG_FLOOR);
                let integrand = eps2 * (grad2 * nu[i] - 2.0 * dnu * du[i])
                    + (model.value(&x) + 1.0) * v * v * nu[i]
                    - nu[i] * v * v * log_u2;
                boundary += w * integrand;
            }
            entries.push(PohozaevEntry { peak: j, axis: i, interior, boundary, residual: (interior - boundary).abs() });
        }
    }
    Ok(PohozaevReport { delta, entries })
}

/// `(r, sup |u|)` over the nodes outside `∪_j B_{r eps}(y_j)`, for each `r` in `radii`.
pub fn decay_profile(u: &Field, peaks: &PeakSet, radii: &[f64]) -> Vec<(f64, f64)> {
    let g = u.grid();
    let mut nearest = vec![0.0; g.len()];
    let mut x = vec![0.0; g.dim()];
    for (flat, d) in nearest.iter_mut().enumerate() {
        g.point_into(flat, &mut x);
        *d = peaks.y.iter().map(|y| dist2(&x, y)).fold(f64::INFINITY, f64::min).sqrt() / peaks.eps;
    }
    radii
        .iter()
        .map(|&r| {
            let sup = nearest
                .iter()
                .zip(&u.values)
                .filter(|(d, _)| **d > r)
                .fold(0.0f64, |m, (_, v)| m.max(v.abs()));
            (r, sup)
        })
        .collect()
}

/// Left and right side of `∫u^2 log u^2 <= (a^2/π)|∇u|^2 + (log|u|^2 - N(1 + log a))|u|^2`.
pub fn log_sobolev_check(u: &Field, a: f64) -> (f64, f64) {
    let g = u.grid();
    let w = g.weights();
    let lhs: f64 = u
        .values
        .iter()
        .zip(w)
        .map(|(v, w)| if v * v == 0.0 { 0.0 } else { w * v * v * 2.0 * v.abs().ln() })
        .sum();
    let mut grad2 = 0.0;
    for axis in 0..g.dim() {
        let d = derivative(u, axis);
        grad2 += d.values.iter().zip(w).map(|(v, w)| w * v * v).sum::<f64>();
    }
    let mass: f64 = u.values.iter().zip(w).map(|(v, w)| w * v * v).sum();
    let rhs = a * a / PI * grad2 + (mass.ln() - g.dim() as f64 * (1.0 + a.ln())) * mass;
    (lhs, rhs)
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectrumLevel {
    pub n: usize,
    pub h: f64,
    /// The `2N + 2` eigenvalues of smallest magnitude, ordered by magnitude.
    pub eigenvalues: Vec<f64>,
    /// How many of them lie within `NEAR_ZERO` of zero.
    pub near_zero: usize,
    /// Largest magnitude among the `N` eigenvalues closest to zero.
    pub kernel_magnitude: f64,
    /// Smallest principal-angle cosine between their eigenvectors and `span{∂U/∂x_i}`.
    pub kernel_cosine: f64,
}

/// Eigenvalues within this distance of zero count as kernel candidates; the rest of the
/// spectrum of the limiting operator sits at even integers.
pub const NEAR_ZERO: f64 = 0.5;

/// Dense eigen-decomposition of `-Δ_h + ω - 2 - 2 log U` with `U` the limiting profile.
pub fn nondegeneracy_spectrum(omega: f64, grid: &Grid) -> Result<SpectrumLevel> {
    let n = grid.len();
    let dim = grid.dim();
    if n > 6000 {
        return Err(Error::Eigen(format!("{n} nodes is too many for a dense eigensolve")));
    }
    let prof = limiting_profile(omega, grid);
    let mut a = DMatrix::zeros(n, n);
    let mut e = vec![0.0; n];
    let mut col = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        grid.laplacian_into(&e, &mut col);
        e[j] = 0.0;
        for i in 0..n {
            a[(i, j)] = -col[i];
        }
        a[(j, j)] += omega - 2.0 - 2.0 * prof.values[j].ln();
    }
    let eig = nalgebra::SymmetricEigen::try_new(a, 1e-13, 100_000)
        .ok_or_else(|| Error::Eigen("symmetric eigensolver did not converge".into()))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&p, &q| eig.eigenvalues[p].abs().total_cmp(&eig.eigenvalues[q].abs()));
    let take = (2 * dim + 2).min(n);
    let eigenvalues: Vec<f64> = order[..take].iter().map(|&k| eig.eigenvalues[k]).collect();
    let near_zero = eig.eigenvalues.iter().filter(|v| v.abs() < NEAR_ZERO).count();
    let kernel_magnitude = eigenvalues[..dim].iter().fold(0.0f64, |m, v| m.max(v.abs()));

    let mut vecs = DMatrix::zeros(n, dim);
    for (c, &k) in order[..dim].iter().enumerate() {
        vecs.column_mut(c).copy_from(&eig.eigenvectors.column(k));
    }
    let mut tangents = DMatrix::zeros(n, dim);
    let mut x = vec![0.0; dim];
    for flat in 0..n {
        grid.point_into(flat, &mut x);
        for i in 0..dim {
            tangents[(flat, i)] = -x[i] * prof.values[flat];
        }
    }
    let q1 = vecs.qr().q();
    let q2 = tangents.qr().q();
    let kernel_cosine = (q1.transpose() * q2).svd(false, false).singular_values.min();
    Ok(SpectrumLevel { n: grid.n(), h: grid.h(), eigenvalues, near_zero, kernel_magnitude, kernel_cosine })
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectrumSweep {
    pub levels: Vec<SpectrumLevel>,
    /// Observed order at which the kernel eigenvalues approach zero.
    pub rate: f64,
}

/// [`nondegeneracy_spectrum`] on `[-half_width, half_width]^N` for each `n`.
pub fn spectrum_sweep(omega: f64, dim: usize, half_width: f64, ns: &[usize]) -> Result<SpectrumSweep> {
    let levels = ns
        .iter()
        .map(|&n| nondegeneracy_spectrum(omega, &Grid::new(dim, n, half_width)?))
        .collect::<Result<Vec<_>>>()?;
    let hs: Vec<f64> = levels.iter().map(|l| l.h).collect();
    let mags: Vec<f64> = levels.iter().map(|l| l.kernel_magnitude).collect();
    Ok(SpectrumSweep { rate: convergence_rate(&hs, &mags), levels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ansatz::{gausson, multi_peak_sum};

    #[test]
    fn log_sobolev_on_a_gaussian() {
        let g = Grid::new(2, 161, 8.0).unwrap();
        let u = Field::from_fn(&g, |x| (-0.5 * (x[0] * x[0] + x[1] * x[1])).exp());
        let (lhs, rhs) = log_sobolev_check(&u, 1.0);
        assert!((lhs + PI).abs() < 1e-6);
        assert!((rhs - (1.0 + PI * (PI.ln() - 2.0))).abs() < 1e-2, "{rhs}");
        assert!(lhs <= rhs);
        let (l2, r2) = log_sobolev_check(&u.map(|v| 2.0 * v), 1.0);
        assert!(l2 <= r2);
    }

    #[test]
    fn log_sobolev_on_a_narrow_bump() {
        let g = Grid::new(2, 201, 1.0).unwrap();
        let u = Field::from_fn(&g, |x| (-(x[0] * x[0] + x[1] * x[1]) / 0.005).exp());
        let (lhs, rhs) = log_sobolev_check(&u, 1.0);
        assert!(lhs < 0.0 && rhs.is_finite() && lhs <= rhs, "{lhs} {rhs}");
    }

    #[test]
    fn decay_of_a_gausson() {
        let eps = 0.2;
        let g = Grid::for_peaks(2, eps, &[vec![0.0, 0.0]]).unwrap();
        let p = PeakSet::at_critical_points(eps, vec![vec![0.0, 0.0]], 0.5).unwrap();
        let u = gausson(eps, &[0.0, 0.0], 1.0, &g);
        let radii: Vec<f64> = (2..=6).map(|r| r as f64).collect();
        let prof = decay_profile(&u, &p, &radii);
        assert!(prof.windows(2).all(|w| w[1].1 <= w[0].1));
        let xs: Vec<f64> = prof.iter().map(|(r, _)| r * r).collect();
        let ys: Vec<f64> = prof.iter().map(|(_, s)| s.ln()).collect();
        let slope = crate::math::fit_slope(&xs, &ys);
        assert!((slope + 0.5).abs() < 0.05, "{slope}");
        let flat = decay_profile(&Field::constant(&g, 1.0), &p, &radii);
        assert!(flat.iter().all(|(_, s)| *s == 1.0));
    }

    #[test]
    fn pohozaev_balances_for_an_exact_gausson() {
        let m = PotentialModel::constant(1.0, 2).unwrap();
        let eps = 0.2;
        let g = Grid::for_peaks(2, eps, &[vec![0.0, 0.0]]).unwrap();
        let p = PeakSet::at_critical_points(eps, vec![vec![0.0, 0.0]], 0.5).unwrap();
        let rep = pohozaev_residual(&multi_peak_sum(&p, &m, &g), &p, &m, None).unwrap();
        for e in &rep.entries {
            assert_eq!(e.interior, 0.0);
            assert!(e.residual < 1e-10, "{e:?}");
        }
        assert!(pohozaev_residual(&multi_peak_sum(&p, &m, &g), &p, &m, Some(5.0)).is_err());
    }

    #[test]
    fn pohozaev_identity_holds_at_moderate_radius() {
        // shifted peak in a tilted field: both sides are O(1) and must agree
        let m = PotentialModel::constant(1.0, 2).unwrap();
        let eps = 0.3;
        let g = Grid::new(2, 201, 2.5).unwrap();
        let p = PeakSet::at_critical_points(eps, vec![vec![0.0, 0.0]], 0.5).unwrap();
        let u = gausson(eps, &[0.0, 0.0], 1.0, &g);
        let rep = pohozaev_residual(&u, &p, &m, Some(0.3)).unwrap();
        for e in &rep.entries {
            assert!(e.residual < 1e-3, "{e:?}");
        }
    }

    #[test]
    fn spectrum_has_a_two_dimensional_kernel() {
        let lvl = nondegeneracy_spectrum(1.0, &Grid::new(2, 21, 5.0).unwrap()).unwrap();
        assert_eq!(lvl.near_zero, 2);
        assert!(lvl.kernel_cosine > 0.99);
        assert!((lvl.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min) + 2.0).abs() < 0.2);
    }

    #[test]
    fn translation_modes_solve_the_limiting_equation() {
        let mut hs = vec![];
        let mut errs = vec![];
        for n in [41, 81, 161] {
            let g = Grid::new(2, n, 6.0).unwrap();
            let prof = limiting_profile(1.0, &g);
            let t = Field::from_fn(&g, |x| -x[0] * (0.5 * (3.0 - x[0] * x[0] - x[1] * x[1])).exp());
            let lap = crate::grid::laplacian(&t);
            let mut e = 0.0f64;
            for k in 0..g.len() {
                if g.depth(k) >= 1 {
                    let r = -lap.values[k] + (1.0 - 2.0 - 2.0 * prof.values[k].ln()) * t.values[k];
                    e = e.max(r.abs());
                }
            }
            hs.push(g.h());
            errs.push(e);
        }
        assert!(convergence_rate(&hs, &errs) >= 1.9);
    }
}
