//! Restarted GMRES for matrix-free complex linear systems.

use crate::linalg::{C64, ZERO};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmresOptions {
    pub restart: usize,
    pub max_iterations: usize,
    /// Stop when the 2-norm of the true residual `b − A x` falls below this.
    pub tol: f64,
}

impl Default for GmresOptions {
    fn default() -> Self {
        GmresOptions { restart: 80, max_iterations: 20_000, tol: 1e-12 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmresOutcome {
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

fn dot(a: &[C64], b: &[C64]) -> C64 {
    // ⟨a, b⟩ conjugate-linear in the first slot.
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn norm(a: &[C64]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Solves `A x = b` with right preconditioning `A M⁻¹ y = b`, `x = M⁻¹ y`,
/// starting from the contents of `x`.
pub fn gmres<A, P>(mut apply: A, precond: P, b: &[C64], x: &mut [C64], opts: &GmresOptions) -> GmresOutcome
where
    A: FnMut(&[C64], &mut [C64]),
    P: Fn(&[C64], &mut [C64]),
{
    let n = b.len();
    let m = opts.restart.max(1);
    let mut r = vec![ZERO; n];
    let mut w = vec![ZERO; n];
    let mut z = vec![ZERO; n];
    let mut basis: Vec<Vec<C64>> = Vec::with_capacity(m + 1);
    let mut hess = vec![vec![ZERO; m]; m + 1];
    let mut cs = vec![0.0f64; m];
    let mut sn = vec![ZERO; m];
    let mut g = vec![ZERO; m + 1];
    let mut iterations = 0usize;

    let true_residual = |apply: &mut A, x: &[C64], r: &mut [C64]| {
        apply(x, r);
        for (ri, bi) in r.iter_mut().zip(b) {
            *ri = *bi - *ri;
        }
        norm(r)
    };

    let mut beta = true_residual(&mut apply, x, &mut r);
    loop {
        if beta < opts.tol || !beta.is_finite() || iterations >= opts.max_iterations {
            return GmresOutcome { iterations, residual: beta, converged: beta < opts.tol };
        }
        basis.clear();
        basis.push(r.iter().map(|v| v / beta).collect());
        g.iter_mut().for_each(|v| *v = ZERO);
        g[0] = C64::new(beta, 0.0);
        let mut k_used = 0;
        for j in 0..m {
            iterations += 1;
            precond(&basis[j], &mut z);
            apply(&z, &mut w);
            for (i, v) in basis.iter().enumerate() {
                let h = dot(v, &w);
                hess[i][j] = h;
                for (wk, vk) in w.iter_mut().zip(v) {
                    *wk -= h * vk;
                }
            }
            let hn = norm(&w);
            hess[j + 1][j] = C64::new(hn, 0.0);
            for i in 0..j {
                let (a, bb) = (hess[i][j], hess[i + 1][j]);
                hess[i][j] = a * cs[i] + sn[i] * bb;
                hess[i + 1][j] = -sn[i].conj() * a + bb * cs[i];
            }
            let (h1, h2) = (hess[j][j], hess[j + 1][j]);
            let nu = (h1.norm_sqr() + h2.norm_sqr()).sqrt();
            if nu == 0.0 {
                cs[j] = 1.0;
                sn[j] = ZERO;
            } else if h1.norm() == 0.0 {
                cs[j] = 0.0;
                sn[j] = h2.conj() / h2.norm();
            } else {
                let phase = h1 / h1.norm();
                cs[j] = h1.norm() / nu;
                sn[j] = phase * h2.conj() / nu;
            }
            hess[j][j] = cs[j] * h1 + sn[j] * h2;
            hess[j + 1][j] = ZERO;
            let gj = g[j];
            g[j] = gj * cs[j];
            g[j + 1] = -sn[j].conj() * gj;
            k_used = j + 1;
            let est = g[j + 1].norm();
            if est < 0.5 * opts.tol || hn == 0.0 || iterations >= opts.max_iterations {
                break;
            }
            basis.push(w.iter().map(|v| v / hn).collect());
        }
        // Back substitution for the Krylov coefficients.
        let mut y = vec![ZERO; k_used];
        for i in (0..k_used).rev() {
            let mut s = g[i];
            for k in i + 1..k_used {
                s -= hess[i][k] * y[k];
            }
            y[i] = s / hess[i][i];
        }
        let mut update = vec![ZERO; n];
        for (k, yk) in y.iter().enumerate() {
            for (u, v) in update.iter_mut().zip(&basis[k]) {
                *u += yk * v;
            }
        }
        precond(&update, &mut z);
        for (xi, zi) in x.iter_mut().zip(&z) {
            *xi += zi;
        }
        beta = true_residual(&mut apply, x, &mut r);
    }
}
