//! Gaussian building blocks `U_{eps,y}(x) = exp((V(y) + N)/2 - |x - y|^2 / (2 eps^2))`,
//! their translation derivatives, and the multi-peak sum `G = Σ_j U_j`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::grid::{EpsMetric, Field, Grid};
use crate::math::{dist2, logsumexp};
use crate::potential::PotentialModel;

/// Largest accepted condition number of the kernel Gram matrix.
pub const MAX_GRAM_CONDITION: f64 = 1e12;

/// Scale `eps`, current centres `y_j`, their target critical points `ξ_j`, and the
/// radius `delta` of the balls the centres must stay in.
#[derive(Debug, Clone, PartialEq)]
pub struct PeakSet {
    pub eps: f64,
    pub y: Vec<Vec<f64>>,
    pub xi: Vec<Vec<f64>>,
    pub delta: f64,
}

impl PeakSet {
    pub fn new(eps: f64, y: Vec<Vec<f64>>, xi: Vec<Vec<f64>>, delta: f64) -> Result<Self> {
        let bad = |m: String| Err(Error::InvalidPeaks(m));
        if !(eps > 0.0 && eps.is_finite()) {
            return bad(format!("eps = {eps} must be positive"));
        }
        if !(delta > 0.0) {
            return bad(format!("delta = {delta} must be positive"));
        }
        if y.is_empty() || y.len() != xi.len() {
            return bad(format!("{} centres for {} critical points", y.len(), xi.len()));
        }
        let dim = xi[0].len();
        if dim == 0 || y.iter().chain(&xi).any(|p| p.len() != dim) {
            return bad("points have inconsistent dimensions".into());
        }
        if y.iter().chain(&xi).flatten().any(|t| !t.is_finite()) {
            return bad("non-finite coordinate".into());
        }
        let set = Self { eps, y, xi, delta };
        set.check_balls()?;
        for i in 0..set.k() {
            for j in i + 1..set.k() {
                if dist2(&set.xi[i], &set.xi[j]).sqrt() <= 2.0 * delta {
                    return bad(format!("balls around critical points {i} and {j} overlap"));
                }
            }
        }
        Ok(set)
    }

    /// Centres at their critical points.
    pub fn at_critical_points(eps: f64, xi: Vec<Vec<f64>>, delta: f64) -> Result<Self> {
        Self::new(eps, xi.clone(), xi, delta)
    }

    /// The same set with new centres; the ball constraint is re-checked.
    pub fn with_centres(&self, y: Vec<Vec<f64>>) -> Result<Self> {
        if y.len() != self.k() || y.iter().any(|p| p.len() != self.dim()) {
            return Err(Error::InvalidPeaks("centre list does not match the peak set".into()));
        }
        let set = Self { y, ..self.clone() };
        set.check_balls()?;
        Ok(set)
    }

    fn check_balls(&self) -> Result<()> {
        for (j, (y, xi)) in self.y.iter().zip(&self.xi).enumerate() {
            let d = dist2(y, xi).sqrt();
            if d > self.delta {
                return Err(Error::BallExit { peak: j, distance: d, delta: self.delta });
            }
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.y.len()
    }

    pub fn dim(&self) -> usize {
        self.xi[0].len()
    }

    /// `V(y_j)` for every centre.
    pub fn heights(&self, model: &PotentialModel) -> Vec<f64> {
        self.y.iter().map(|y| model.value(y)).collect()
    }

    /// `log U_j(x)` for every peak.
    pub fn log_profiles(&self, heights: &[f64], x: &[f64], out: &mut [f64]) {
        for ((o, y), &vy) in out.iter_mut().zip(&self.y).zip(heights) {
            *o = log_gausson_at(self.eps, y, vy, x);
        }
    }
}

/// `log U_{eps,y}(x)` in closed form.
pub fn log_gausson_at(eps: f64, y: &[f64], vy: f64, x: &[f64]) -> f64 {
    0.5 * (vy + y.len() as f64) - dist2(x, y) / (2.0 * eps * eps)
}

pub fn gausson(eps: f64, y: &[f64], vy: f64, grid: &Grid) -> Field {
    Field::from_fn(grid, |x| log_gausson_at(eps, y, vy, x).exp())
}

/// `log G` on every node, via log-sum-exp of the closed-form exponents.
pub fn log_multi_peak(peaks: &PeakSet, model: &PotentialModel, grid: &Grid) -> Vec<f64> {
    let heights = peaks.heights(model);
    let mut buf = vec![0.0; peaks.k()];
    Field::from_fn(grid, |x| {
        peaks.log_profiles(&heights, x, &mut buf);
        logsumexp(&buf)
    })
    .values
}

pub fn multi_peak_sum(peaks: &PeakSet, model: &PotentialModel, grid: &Grid) -> Field {
    let heights = peaks.heights(model);
    let mut buf = vec![0.0; peaks.k()];
    Field::from_fn(grid, |x| {
        peaks.log_profiles(&heights, x, &mut buf);
        buf.iter().map(|l| l.exp()).sum()
    })
}

/// `U(x) = exp((omega + N - |x|^2) / 2)`.
pub fn limiting_profile(omega: f64, grid: &Grid) -> Field {
    let n = grid.dim() as f64;
    Field::from_fn(grid, |x| (0.5 * (omega + n - x.iter().map(|t| t * t).sum::<f64>())).exp())
}

/// `∫ eps^2 |∇U|^2 + (V(y) + 1) U^2` of a single Gausson over `R^N`, with `V` frozen at `V(y)`.
pub fn gausson_eps_norm_sq(eps: f64, vy: f64, dim: usize) -> f64 {
    let n = dim as f64;
    (vy + n).exp() * (std::f64::consts::PI * eps * eps).powf(0.5 * n) * (0.5 * n + vy + 1.0)
}

/// `∫ eps^2 |∇U|^2 + U^2` of a single Gausson over `R^N`.
pub fn gausson_energy(eps: f64, vy: f64, dim: usize) -> f64 {
    let n = dim as f64;
    (vy + n).exp() * (std::f64::consts::PI * eps * eps).powf(0.5 * n) * (0.5 * n + 1.0)
}

/// The approximate kernel `span{∂U_j/∂x_i}` with its Gram matrix under `<.,.>_eps`.
/// Basis element `m = j N + i` is the derivative of peak `j` along axis `i`.
#[derive(Debug, Clone)]
pub struct KernelBasis {
    pub fields: Vec<Field>,
    pub gram_eps: DMatrix<f64>,
    /// `M b_m`, so that `<u, b_m>_eps = u · paired[m]`.
    pub paired: Vec<Vec<f64>>,
    pub condition: f64,
    pub metric: EpsMetric,
}

impl KernelBasis {
    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    /// `(<u, b_m>_eps)_m`
    pub fn pairings(&self, u: &[f64]) -> Vec<f64> {
        self.paired.iter().map(|c| c.iter().zip(u).map(|(a, b)| a * b).sum()).collect()
    }
}

pub fn kernel_basis(peaks: &PeakSet, model: &PotentialModel, grid: &Grid) -> Result<KernelBasis> {
    if grid.dim() != peaks.dim() {
        return Err(Error::GridMismatch);
    }
    let heights = peaks.heights(model);
    let inv_e2 = 1.0 / (peaks.eps * peaks.eps);
    let mut fields = Vec::with_capacity(peaks.k() * peaks.dim());
    for (y, &vy) in peaks.y.iter().zip(&heights) {
        for i in 0..peaks.dim() {
            fields.push(Field::from_fn(grid, |x| {
                -(x[i] - y[i]) * inv_e2 * log_gausson_at(peaks.eps, y, vy, x).exp()
            }));
        }
    }
    let metric = EpsMetric::new(grid, peaks.eps, model);
    let paired: Vec<Vec<f64>> = fields.iter().map(|f| metric.apply(&f.values)).collect();
    let m = fields.len();
    let mut gram = DMatrix::zeros(m, m);
    for a in 0..m {
        for b in 0..m {
            gram[(a, b)] = paired[a].iter().zip(&fields[b].values).map(|(p, q)| p * q).sum();
        }
    }
    let sym = (&gram + gram.transpose()) * 0.5;
    let eig = sym.symmetric_eigen().eigenvalues;
    let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0f64), |(l, h), &e| (l.min(e), h.max(e.abs())));
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if condition > MAX_GRAM_CONDITION {
        return Err(Error::DegenerateKernel { condition });
    }
    Ok(KernelBasis { fields, gram_eps: gram, paired, condition, metric })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{inner_eps, laplacian, norm_linf};
    use crate::math::convergence_rate;

    #[test]
    fn gausson_centre_value_and_unit_level_set() {
        let g = Grid::new(2, 11, 1.0).unwrap();
        let u = gausson(0.3, &[0.0, 0.0], 1.0, &g);
        let c = g.nearest(&[0.0, 0.0]).unwrap();
        assert!((u.values[c] - 4.481689070338065).abs() < 1e-12);
        let r = 0.3 * 3f64.sqrt();
        assert!((log_gausson_at(0.3, &[0.0, 0.0], 1.0, &[r, 0.0])).abs() < 1e-12);
    }

    #[test]
    fn gausson_residual_is_second_order() {
        let eps = 0.3;
        let mut hs = vec![];
        let mut errs = vec![];
        for n in [61, 121, 241] {
            let g = Grid::new(2, n, 2.5).unwrap();
            let u = gausson(eps, &[0.1, -0.05], 1.0, &g);
            let d = laplacian(&u);
            let mut e = 0.0f64;
            for k in 0..g.len() {
                if g.depth(k) >= 1 {
                    let v = u.values[k];
                    let r = -eps * eps * d.values[k] + v - v * (v * v).ln();
                    e = e.max(r.abs());
                }
            }
            hs.push(g.h());
            errs.push(e);
        }
        assert!(convergence_rate(&hs, &errs) >= 1.9, "{errs:?}");
    }

    #[test]
    fn peak_set_invariants() {
        let xi = vec![vec![-1.0, 0.0], vec![1.0, 0.0]];
        assert!(PeakSet::at_critical_points(0.1, xi.clone(), 0.5).is_ok());
        assert!(PeakSet::at_critical_points(0.1, xi.clone(), 1.0).is_err());
        let p = PeakSet::at_critical_points(0.1, xi.clone(), 0.5).unwrap();
        assert!(matches!(
            p.with_centres(vec![vec![-1.0, 0.6], vec![1.0, 0.0]]),
            Err(Error::BallExit { peak: 0, .. })
        ));
        assert!(PeakSet::new(0.0, xi.clone(), xi, 0.5).is_err());
    }

    #[test]
    fn single_peak_gram_is_diagonal() {
        let g = Grid::new(2, 61, 2.0).unwrap();
        let m = PotentialModel::constant(1.0, 2).unwrap();
        let p = PeakSet::at_critical_points(0.3, vec![vec![0.0, 0.0]], 0.5).unwrap();
        let kb = kernel_basis(&p, &m, &g).unwrap();
        assert_eq!(kb.gram_eps.shape(), (2, 2));
        assert!(kb.gram_eps[(0, 1)].abs() < 1e-10 * kb.gram_eps[(0, 0)]);
        let u = gausson(0.3, &[0.0, 0.0], 1.0, &g);
        for b in &kb.fields {
            let s: f64 = u.values.iter().zip(&b.values).zip(g.weights()).map(|((a, b), w)| a * b * w).sum();
            assert!(s.abs() < 1e-12);
        }
    }

    #[test]
    fn far_peaks_decouple_in_the_gram_matrix() {
        let eps = 0.1;
        let m = PotentialModel::constant(1.0, 2).unwrap();
        let xi = vec![vec![-1.0, 0.0], vec![1.0, 0.0]];
        let g = Grid::for_peaks(2, eps, &xi).unwrap();
        let p = PeakSet::at_critical_points(eps, xi, 0.3).unwrap();
        let kb = kernel_basis(&p, &m, &g).unwrap();
        let scale = kb.gram_eps[(0, 0)];
        for a in 0..2 {
            for b in 2..4 {
                assert!(kb.gram_eps[(a, b)].abs() / scale < 1e-12);
            }
        }
    }

    #[test]
    fn eps_pairing_of_gausson_matches_closed_form() {
        let eps = 0.3;
        let m = PotentialModel::constant(1.0, 2).unwrap();
        let g = Grid::new(2, 241, 2.6).unwrap();
        let u = gausson(eps, &[0.0, 0.0], 1.0, &g);
        let num = inner_eps(&u, &u, eps, &m).unwrap();
        let exact = gausson_eps_norm_sq(eps, 1.0, 2);
        assert!((exact - 3.0 * std::f64::consts::PI * eps * eps * 3f64.exp()).abs() < 1e-12);
        assert!((num - exact).abs() / exact < 1e-3, "{num} {exact}");
    }

    #[test]
    fn kernel_fields_solve_the_frozen_linearisation() {
        let eps = 0.3;
        let mut errs = vec![];
        let mut hs = vec![];
        for n in [31, 61, 121] {
            let g = Grid::new(2, n, 2.5).unwrap();
            let m = PotentialModel::constant(1.0, 2).unwrap();
            let p = PeakSet::at_critical_points(eps, vec![vec![0.0, 0.0]], 0.5).unwrap();
            let kb = kernel_basis(&p, &m, &g).unwrap();
            let b = &kb.fields[0];
            let d = laplacian(b);
            let mut e = 0.0f64;
            let mut x = [0.0; 2];
            for k in 0..g.len() {
                if g.depth(k) >= 1 {
                    g.point_into(k, &mut x);
                    let lu = log_gausson_at(eps, &[0.0, 0.0], 1.0, &x);
                    let r = -eps * eps * d.values[k] + (1.0 - 2.0 * (lu + 1.0)) * b.values[k];
                    e = e.max(r.abs());
                }
            }
            hs.push(g.h());
            errs.push(e);
        }
        assert!(convergence_rate(&hs, &errs) >= 1.9);
    }

    #[test]
    fn multi_peak_sum_dominates_each_gausson() {
        let eps = 0.2;
        let m = PotentialModel::double_well(1.0, 1.0, 1.0, 1.0, 2).unwrap();
        let xi = vec![vec![-1.0, 0.0], vec![1.0, 0.0]];
        let g = Grid::new(2, 81, 2.0).unwrap();
        let p = PeakSet::at_critical_points(eps, xi, 0.5).unwrap();
        let gs = multi_peak_sum(&p, &m, &g);
        let u0 = gausson(eps, &p.y[0], m.value(&p.y[0]), &g);
        assert!(gs.values.iter().zip(&u0.values).all(|(a, b)| a >= b));
        let c = g.nearest(&p.y[0]).unwrap();
        assert!((gs.values[c] - (1.0f64 + 2.0).exp().sqrt()).abs() < 1e-10);
        let logs = log_multi_peak(&p, &m, &g);
        assert!(logs.iter().all(|l| l.is_finite()));
    }

    #[test]
    fn limiting_profile_shape() {
        let g = Grid::new(1, 201, 3.0).unwrap();
        let u = limiting_profile(1.0, &g);
        let c = g.nearest(&[0.0]).unwrap();
        assert!((u.values[c] - 1f64.exp()).abs() < 1e-12);
        assert!((norm_linf(&u) - 1f64.exp()).abs() < 1e-12);
        for k in c..g.len() - 1 {
            assert!(u.values[k + 1] < u.values[k]);
        }
    }
}
