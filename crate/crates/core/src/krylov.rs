//! Restarted GMRES with right preconditioning, matrix-free.

use crate::math::{axpy, dot, norm2};

#[derive(Debug, Clone)]
pub struct GmresOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// `|b - A x| / |b|` (or `|b - A x|` when `b = 0`).
    pub residual: f64,
    pub converged: bool,
}

/// Solves `A x = b` to relative residual `tol`. `apply(v, out)` writes `A v`;
/// `precond(v, out)` writes `P^{-1} v`. The initial guess is `x0` (zero if `None`).
pub fn gmres(
    mut apply: impl FnMut(&[f64], &mut [f64]),
    mut precond: impl FnMut(&[f64], &mut [f64]),
    b: &[f64],
    x0: Option<&[f64]>,
    tol: f64,
    restart: usize,
    max_iter: usize,
) -> GmresOutcome {
    let n = b.len();
    let bnorm = norm2(b);
    let scale = if bnorm > 0.0 { bnorm } else { 1.0 };
    let mut x = x0.map(|v| v.to_vec()).unwrap_or_else(|| vec![0.0; n]);
    let mut r = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut iterations = 0;
    let m = restart.max(1);

    let residual = |x: &[f64], r: &mut [f64], apply: &mut dyn FnMut(&[f64], &mut [f64])| {
        apply(x, r);
        for (ri, bi) in r.iter_mut().zip(b) {
            *ri = bi - *ri;
        }
        norm2(r)
    };

    let mut beta = residual(&x, &mut r, &mut apply);
    if bnorm == 0.0 && x0.is_none() {
        return GmresOutcome { x, iterations: 0, residual: 0.0, converged: true };
    }
    loop {
        if beta / scale <= tol || iterations >= max_iter {
            return GmresOutcome { x, iterations, residual: beta / scale, converged: beta / scale <= tol };
        }
        let mut v: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
        v.push(r.iter().map(|t| t / beta).collect());
        let mut h = vec![vec![0.0; m]; m + 1];
        let (mut cs, mut sn) = (vec![0.0; m], vec![0.0; m]);
        let mut g = vec![0.0; m + 1];
        g[0] = beta;
        let mut k_used = 0;
        for k in 0..m {
            precond(&v[k], &mut z);
            apply(&z, &mut w);
            for i in 0..=k {
                h[i][k] = dot(&w, &v[i]);
                axpy(-h[i][k], &v[i], &mut w);
            }
            // one pass of reorthogonalisation keeps long cycles stable
            for i in 0..=k {
                let c = dot(&w, &v[i]);
                h[i][k] += c;
                axpy(-c, &v[i], &mut w);
            }
            h[k + 1][k] = norm2(&w);
            for i in 0..k {
                let t = cs[i] * h[i][k] + sn[i] * h[i + 1][k];
                h[i + 1][k] = -sn[i] * h[i][k] + cs[i] * h[i + 1][k];
                h[i][k] = t;
            }
            let denom = h[k][k].hypot(h[k + 1][k]);
            if denom == 0.0 {
                cs[k] = 1.0;
                sn[k] = 0.0;
            } else {
                cs[k] = h[k][k] / denom;
                sn[k] = h[k + 1][k] / denom;
            }
            h[k][k] = denom;
            h[k + 1][k] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            iterations += 1;
            k_used = k + 1;
            let hk1 = norm2(&w);
            let done = g[k + 1].abs() / scale <= tol || iterations >= max_iter || hk1 == 0.0;
            if !done {
                v.push(w.iter().map(|t| t / hk1).collect());
            }
            if done {
                break;
            }
        }
        let mut yk = vec![0.0; k_used];
        for i in (0..k_used).rev() {
            let s: f64 = (i + 1..k_used).map(|j| h[i][j] * yk[j]).sum();
            yk[i] = if h[i][i] != 0.0 { (g[i] - s) / h[i][i] } else { 0.0 };
        }
        let mut update = vec![0.0; n];
        for (i, c) in yk.iter().enumerate() {
            axpy(*c, &v[i], &mut update);
        }
        precond(&update, &mut z);
        axpy(1.0, &z, &mut x);
        let prev = beta;
        beta = residual(&x, &mut r, &mut apply);
        if beta >= prev && k_used < m && beta / scale > tol {
            // happy breakdown without progress: the Krylov space is exhausted
            return GmresOutcome { x, iterations, residual: beta / scale, converged: false };
        }
    }
}
