//! The linearisation of the equation around the multi-peak sum `G`, the
//! `<.,.>_eps`-orthogonal projection away from the approximate kernel, the bordered
//! solve that yields the kernel multipliers, and a dense coercivity probe.

use nalgebra::DMatrix;

use crate::ansatz::{kernel_basis, log_multi_peak, KernelBasis, PeakSet};
use crate::error::{Error, Result};
use crate::grid::{norm_l2, Field, Grid};
use crate::krylov::gmres;
use crate::nonlinearity::{df_from_log, LOG_FLOOR};
use crate::potential::PotentialModel;

/// Largest grid the dense probe accepts.
pub const MAX_PROBE_POINTS: usize = 4000;
const PROBE_MAX_ITER: usize = 2000;
const PROBE_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct LinearizedOperator {
    pub peaks: PeakSet,
    pub model: PotentialModel,
    pub grid: Grid,
    /// `V(x) - f'(G(x))`, with `log G` taken from the closed-form exponents.
    pub diagonal_part: Field,
    eps2: f64,
}

impl LinearizedOperator {
    pub fn new(peaks: &PeakSet, model: &PotentialModel, grid: &Grid) -> Self {
        let log_g = log_multi_peak(peaks, model, grid);
        let v = model.sample(grid);
        let diag = v
            .values
            .iter()
            .zip(&log_g)
            .map(|(vx, lg)| vx - df_from_log(*lg, LOG_FLOOR))
            .collect();
        Self {
            peaks: peaks.clone(),
            model: model.clone(),
            grid: grid.clone(),
            diagonal_part: Field::from_values(grid, diag).expect("finite diagonal"),
            eps2: peaks.eps * peaks.eps,
        }
    }

    pub fn apply_into(&self, phi: &[f64], out: &mut [f64]) {
        self.grid.laplacian_into(phi, out);
        for ((o, p), d) in out.iter_mut().zip(phi).zip(&self.diagonal_part.values) {
            *o = -self.eps2 * *o + d * p;
        }
    }

    /// Diagonal of the discrete operator.
    pub fn diagonal(&self) -> Vec<f64> {
        let h = self.grid.h();
        let c = self.eps2 * 2.0 * self.grid.dim() as f64 / (h * h);
        self.diagonal_part.values.iter().map(|d| c + d).collect()
    }
}

pub fn apply_l(op: &LinearizedOperator, phi: &Field) -> Result<Field> {
    if phi.grid() != &op.grid {
        return Err(Error::GridMismatch);
    }
    let mut out = Field::zeros(&op.grid);
    op.apply_into(&phi.values, &mut out.values);
    Ok(out)
}

/// Coefficients `c` with `Σ_m c_m <b_m, b_l>_eps = <u, b_l>_eps`.
pub fn kernel_coefficients(u: &[f64], basis: &KernelBasis) -> Result<Vec<f64>> {
    let rhs = nalgebra::DVector::from_vec(basis.pairings(u));
    let chol = basis
        .gram_eps
        .clone()
        .cholesky()
        .ok_or(Error::DegenerateKernel { condition: basis.condition })?;
    Ok(chol.solve(&rhs).iter().copied().collect())
}

/// `u - Σ_m c_m b_m`, the `<.,.>_eps`-orthogonal projection onto the complement of the
/// kernel span.
pub fn project_e(phi: &Field, basis: &KernelBasis) -> Result<Field> {
    if basis.fields.first().is_some_and(|b| b.grid() != phi.grid()) {
        return Err(Error::GridMismatch);
    }
    let c = kernel_coefficients(&phi.values, basis)?;
    let mut out = phi.clone();
    for (cm, b) in c.iter().zip(&basis.fields) {
        for (o, v) in out.values.iter_mut().zip(&b.values) {
            *o -= cm * v;
        }
    }
    Ok(out)
}

/// Largest `|<phi, b_m>_eps| / (|phi|_eps |b_m|_eps)`.
pub fn orthogonality_defect(phi: &[f64], basis: &KernelBasis) -> f64 {
    let pn = basis.metric.norm(phi);
    if pn == 0.0 {
        return 0.0;
    }
    basis
        .pairings(phi)
        .iter()
        .enumerate()
        .map(|(m, p)| p.abs() / (pn * basis.gram_eps[(m, m)].sqrt()))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy)]
pub struct LinearSolveConfig {
    pub tol_lin: f64,
    /// `None` means `10 n^{N/2}`.
    pub max_krylov: Option<usize>,
    pub restart: usize,
}

impl Default for LinearSolveConfig {
    fn default() -> Self {
        Self { tol_lin: 1e-10, max_krylov: None, restart: 100 }
    }
}

impl LinearSolveConfig {
    pub fn max_iterations(&self, grid: &Grid) -> usize {
        self.max_krylov
            .unwrap_or_else(|| (10.0 * (grid.n() as f64).powf(0.5 * grid.dim() as f64)).ceil() as usize)
    }
}

#[derive(Debug, Clone)]
pub struct BorderedSolveResult {
    pub phi: Field,
    /// Multipliers in the convention `L phi + Σ_m a_m b_m = rhs`.
    pub a: Vec<f64>,
    /// `|L phi + Σ a b - rhs|_{L2} / |rhs|_{L2}`.
    pub residual: f64,
    pub iterations: usize,
}

/// Solves `L phi + Σ_m a_m b_m = rhs`, `<phi, b_m>_eps = 0`.
pub fn solve_bordered(
    op: &LinearizedOperator,
    rhs: &Field,
    basis: &KernelBasis,
    cfg: &LinearSolveConfig,
) -> Result<BorderedSolveResult> {
    if rhs.grid() != &op.grid {
        return Err(Error::GridMismatch);
    }
    let n = op.grid.len();
    let k = basis.len();
    let rhs_norm = norm_l2(rhs);
    if rhs_norm == 0.0 {
        return Ok(BorderedSolveResult {
            phi: Field::zeros(&op.grid),
            a: vec![0.0; k],
            residual: 0.0,
            iterations: 0,
        });
    }
    let diag = op.diagonal();
    let dbar = diag.iter().map(|d| d.abs()).sum::<f64>() / n as f64;
    let s: Vec<f64> = basis
        .fields
        .iter()
        .map(|b| dbar / crate::math::norm2(&b.values))
        .collect();
    let t: Vec<f64> = basis.paired.iter().map(|c| dbar / crate::math::norm2(c)).collect();

    let apply = |z: &[f64], out: &mut [f64]| {
        let (phi, alpha) = z.split_at(n);
        let (top, bottom) = out.split_at_mut(n);
        op.apply_into(phi, top);
        for (m, b) in basis.fields.iter().enumerate() {
            let c = alpha[m] * s[m];
            if c != 0.0 {
                crate::math::axpy(c, &b.values, top);
            }
        }
        for m in 0..k {
            bottom[m] = t[m] * crate::math::dot(&basis.paired[m], phi);
        }
    };
    let precond = |z: &[f64], out: &mut [f64]| {
        for i in 0..n {
            out[i] = z[i] / diag[i];
        }
        out[n..].copy_from_slice(&z[n..]);
    };
    let mut b = rhs.values.clone();
    b.extend(std::iter::repeat(0.0).take(k));
    let max_iter = cfg.max_iterations(&op.grid);

    let mut guess: Option<Vec<f64>> = None;
    let mut iterations = 0;
    let mut inner_tol = 0.1 * cfg.tol_lin;
    for _ in 0..4 {
        let out = gmres(apply, precond, &b, guess.as_deref(), inner_tol, cfg.restart, max_iter - iterations);
        iterations += out.iterations;
        let (phi, alpha) = out.x.split_at(n);
        let a: Vec<f64> = alpha.iter().zip(&s).map(|(x, s)| x * s).collect();
        let mut r = vec![0.0; n];
        op.apply_into(phi, &mut r);
        for (m, bf) in basis.fields.iter().enumerate() {
            crate::math::axpy(a[m], &bf.values, &mut r);
        }
        let res: f64 = op
            .grid
            .weights()
            .iter()
            .zip(r.iter().zip(&rhs.values))
            .map(|(w, (x, y))| w * (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
            / rhs_norm;
        if res <= cfg.tol_lin {
            return Ok(BorderedSolveResult {
                phi: Field::from_values(&op.grid, phi.to_vec())?,
                a,
                residual: res,
                iterations,
            });
        }
        if iterations >= max_iter {
            return Err(Error::LinearSolve { iterations, residual: res });
        }
        inner_tol *= 0.1;
        guess = Some(out.x);
    }
    Err(Error::LinearSolve { iterations, residual: f64::NAN })
}

fn dense_from_apply(n: usize, mut apply: impl FnMut(&[f64], &mut [f64])) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    let mut e = vec![0.0; n];
    let mut col = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        apply(&e, &mut col);
        e[j] = 0.0;
        m.column_mut(j).copy_from_slice(&col);
    }
    m
}

#[derive(Debug, Clone, Copy)]
pub struct CoercivityEstimate {
    /// Smallest singular value of `P L` on the complement, in the `eps` geometry.
    pub rho_hat: f64,
    /// Smallest singular value of `L` on the whole grid space, same geometry.
    pub unprojected: f64,
}

/// Dense estimate of `inf |P L phi|_eps / |phi|_eps` over `phi` orthogonal to the kernel.
///
/// With `M = l l^T` the Cholesky factor of the pairing, `x = l^T phi` is an isometry to
/// the Euclidean norm, `L` becomes `K = l^T L l^{-T}`, and the projection becomes the
/// orthogonal projector away from the columns of `l^T B`.
pub fn coercivity_probe(op: &LinearizedOperator, basis: &KernelBasis) -> Result<CoercivityEstimate> {
    let n = op.grid.len();
    if n > MAX_PROBE_POINTS {
        return Err(Error::Probe(format!(
            "grid has {n} nodes; the dense probe accepts at most {MAX_PROBE_POINTS}"
        )));
    }
    let m = dense_from_apply(n, |v, out| out.copy_from_slice(&basis.metric.apply(v)));
    let m = (&m + m.transpose()) * 0.5;
    let l = m
        .cholesky()
        .ok_or_else(|| Error::Probe("pairing matrix is not positive definite".into()))?
        .l();
    let lop = dense_from_apply(n, |v, out| op.apply_into(v, out));
    let lt = l.transpose();
    // K = l^T L l^{-T}: solve K^T = l^{-1} (l^T L)^T
    let lt_l = &lt * &lop;
    let k_t = l
        .solve_lower_triangular(&lt_l.transpose())
        .ok_or_else(|| Error::Probe("singular Cholesky factor".into()))?;
    let kmat = k_t.transpose();

    let unprojected = smallest_singular_value(&kmat)?;

    let mut bmat = DMatrix::zeros(n, basis.len());
    for (j, b) in basis.fields.iter().enumerate() {
        bmat.column_mut(j).copy_from_slice(&b.values);
    }
    let q = (&lt * bmat).qr().q();
    // (I - QQ^T) K (I - QQ^T) + c QQ^T, assembled with rank-k updates
    let qt_k = q.transpose() * &kmat;
    let k_q = &kmat * &q;
    let qt_k_q = &qt_k * &q;
    let norm_k = kmat.iter().fold(0.0f64, |a, v| a.max(v.abs())) * n as f64;
    let mut s = kmat;
    s -= &q * &qt_k;
    s -= &k_q * q.transpose();
    let core = qt_k_q + DMatrix::identity(q.ncols(), q.ncols()) * norm_k;
    s += &q * core * q.transpose();
    let rho_hat = smallest_singular_value(&s)?;
    Ok(CoercivityEstimate { rho_hat, unprojected })
}

/// Inverse power iteration on `(A^T A)^{-1}` with one LU factorisation of `A`.
fn smallest_singular_value(a: &DMatrix<f64>) -> Result<f64> {
    let n = a.nrows();
    let lu = a.clone().lu();
    let (lower, upper, perm) = (lu.l(), lu.u(), lu.p().clone());
    let singular = || Error::Probe("operator matrix is singular".into());
    let mut x = nalgebra::DVector::from_fn(n, |i, _| 1.0 + ((i * 7919) % 101) as f64 / 101.0);
    x /= x.norm();
    let mut sigma = f64::NAN;
    for _ in 0..PROBE_MAX_ITER {
        // y = A^{-T} x, then z = A^{-1} y
        // P A = L U, so A^T y = x reads U^T L^T P y = x
        let w = upper.tr_solve_upper_triangular(&x).ok_or_else(singular)?;
        let mut y = lower.tr_solve_lower_triangular(&w).ok_or_else(singular)?;
        perm.inv_permute_rows(&mut y);
        let z = lu.solve(&y).ok_or_else(singular)?;
        let growth = z.norm();
        let next = 1.0 / growth.sqrt();
        x = z / growth;
        if (next - sigma).abs() <= PROBE_TOL * next {
            return Ok(next);
        }
        sigma = next;
    }
    Err(Error::Probe(format!(
        "inverse iteration did not settle within {PROBE_MAX_ITER} steps (last estimate {sigma:.6e})"
    )))
}

/// [`coercivity_probe`] on a coarse box `[-L, L]^N` with `L = max|y|_∞ + 4 eps` and
/// `h ≤ eps/6` where the dense node budget allows, otherwise the finest odd `n` that fits.
pub fn probe_for(peaks: &PeakSet, model: &PotentialModel) -> Result<CoercivityEstimate> {
    let dim = peaks.dim();
    let l = peaks.y.iter().flatten().fold(0.0f64, |m, t| m.max(t.abs())) + 4.0 * peaks.eps;
    let want = 2 * (6.0 * l / peaks.eps).ceil() as usize + 1;
    let mut cap = (MAX_PROBE_POINTS as f64).powf(1.0 / dim as f64).floor() as usize;
    if cap % 2 == 0 {
        cap -= 1;
    }
    let grid = Grid::new(dim, want.min(cap).max(9), l)?;
    let basis = kernel_basis(peaks, model, &grid)?;
    coercivity_probe(&LinearizedOperator::new(peaks, model, &grid), &basis)
}
