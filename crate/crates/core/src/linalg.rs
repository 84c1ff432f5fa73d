//! Dense complex linear algebra used throughout the crate: Kronecker
//! products, LU solves and a cyclic Jacobi eigensolver for hermitian
//! matrices.

use ndarray::{Array1, Array2, Axis};
use num_complex::Complex64;

use crate::error::{FitError, Result};

pub type C64 = Complex64;
pub type CMatrix = Array2<C64>;
pub type CVector = Array1<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

pub fn identity(n: usize) -> CMatrix {
    Array2::from_diag_elem(n, ONE)
}

pub fn dagger(m: &CMatrix) -> CMatrix {
    m.t().mapv(|z| z.conj())
}

/// Kronecker product `a ⊗ b`; `a` is the slowest-varying factor.
pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    let mut out = Array2::zeros((ar * br, ac * bc));
    for i in 0..ar {
        for j in 0..ac {
            let aij = a[[i, j]];
            if aij == ZERO {
                continue;
            }
            for k in 0..br {
                for l in 0..bc {
                    out[[i * br + k, j * bc + l]] = aij * b[[k, l]];
                }
            }
        }
    }
    out
}

pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

/// `max |m - m†|` elementwise.
pub fn hermiticity_defect(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((m[[i, j]] - m[[j, i]].conj()).norm());
        }
    }
    worst
}

pub fn trace(m: &CMatrix) -> C64 {
    m.diag().sum()
}

pub fn commutator(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.dot(b) - b.dot(a)
}

/// Column-major vectorization: `vec(m)[i + n*j] = m[i, j]`.
pub fn vec_col_major(m: &CMatrix) -> CVector {
    let n = m.nrows();
    let mut v = Array1::zeros(n * m.ncols());
    for ((i, j), z) in m.indexed_iter() {
        v[i + n * j] = *z;
    }
    v
}

pub fn unvec_col_major(v: &CVector, n: usize) -> CMatrix {
    Array2::from_shape_fn((n, n), |(i, j)| v[i + n * j])
}

/// LU factorization with partial pivoting, stored row-major.
pub struct Lu {
    n: usize,
    lu: Vec<C64>,
    perm: Vec<usize>,
    min_pivot: f64,
    max_entry: f64,
}

impl Lu {
    pub fn factor(a: &CMatrix) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(FitError::Dimension { expected: n, got: a.ncols() });
        }
        let mut lu: Vec<C64> = a.iter().copied().collect();
        if !a.is_standard_layout() {
            lu = (0..n * n).map(|k| a[[k / n, k % n]]).collect();
        }
        let max_entry = lu.iter().fold(0.0f64, |m, z| m.max(z.norm()));
        let mut perm: Vec<usize> = (0..n).collect();
        let mut min_pivot = f64::INFINITY;
        for k in 0..n {
            let mut p = k;
            let mut best = lu[k * n + k].norm();
            for r in k + 1..n {
                let v = lu[r * n + k].norm();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            min_pivot = min_pivot.min(best);
            if best == 0.0 {
                continue;
            }
            if p != k {
                for c in 0..n {
                    lu.swap(k * n + c, p * n + c);
                }
                perm.swap(k, p);
            }
            let pivot_inv = ONE / lu[k * n + k];
            let (head, tail) = lu.split_at_mut((k + 1) * n);
            let pivot_row = &head[k * n..(k + 1) * n];
            for row in tail.chunks_exact_mut(n) {
                let f = row[k] * pivot_inv;
                if f == ZERO {
                    continue;
                }
                row[k] = f;
                for c in k + 1..n {
                    row[c] -= f * pivot_row[c];
                }
            }
        }
        Ok(Lu { n, lu, perm, min_pivot, max_entry })
    }

    /// Smallest pivot relative to the largest input entry; ~0 for singular input.
    pub fn relative_min_pivot(&self) -> f64 {
        if self.max_entry == 0.0 {
            0.0
        } else {
            self.min_pivot / self.max_entry
        }
    }

    pub fn solve(&self, b: &CVector) -> CVector {
        let n = self.n;
        let mut x: Vec<C64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let row = &self.lu[i * n..i * n + i];
            let s: C64 = row.iter().zip(&x[..i]).map(|(a, b)| a * b).sum();
            x[i] -= s;
        }
        for i in (0..n).rev() {
            let row = &self.lu[i * n + i + 1..(i + 1) * n];
            let s: C64 = row.iter().zip(&x[i + 1..]).map(|(a, b)| a * b).sum();
            x[i] = (x[i] - s) / self.lu[i * n + i];
        }
        Array1::from(x)
    }
}

pub fn det(a: &CMatrix) -> Result<C64> {
    let lu = Lu::factor(a)?;
    let n = lu.n;
    let mut d = ONE;
    for i in 0..n {
        d *= lu.lu[i * n + i];
    }
    // Sign of the row permutation.
    let mut seen = vec![false; n];
    for start in 0..n {
        if seen[start] {
            continue;
        }
        let mut len = 0;
        let mut k = start;
        while !seen[k] {
            seen[k] = true;
            k = lu.perm[k];
            len += 1;
        }
        if len % 2 == 0 {
            d = -d;
        }
    }
    Ok(d)
}

/// Eigen-decomposition `m = V diag(λ) V†` of a hermitian matrix.
#[derive(Debug, Clone)]
pub struct HermitianEigen {
    /// Ascending.
    pub values: Vec<f64>,
    /// Column `k` is the eigenvector of `values[k]`.
    pub vectors: CMatrix,
}

impl HermitianEigen {
    pub fn vector(&self, k: usize) -> CVector {
        self.vectors.column(k).to_owned()
    }

    pub fn reconstruct(&self) -> CMatrix {
        let mut scaled = self.vectors.clone();
        for (k, mut col) in scaled.axis_iter_mut(Axis(1)).enumerate() {
            col.mapv_inplace(|z| z * self.values[k]);
        }
        scaled.dot(&dagger(&self.vectors))
    }
}

/// Cyclic Jacobi rotations for a hermitian matrix.
///
/// Eigenvalues come back ascending; ties are ordered by the index of the
/// largest-magnitude eigenvector component so that output is reproducible.
pub fn eigh(m: &CMatrix) -> Result<HermitianEigen> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(FitError::Dimension { expected: n, got: m.ncols() });
    }
    let scale = max_abs(m).max(f64::MIN_POSITIVE);
    let defect = hermiticity_defect(m);
    if defect > 1e-10 * scale.max(1.0) {
        return Err(FitError::Hermiticity(defect));
    }

    // Work on the symmetrized copy.
    let mut a = Array2::from_shape_fn((n, n), |(i, j)| 0.5 * (m[[i, j]] + m[[j, i]].conj()));
    let mut v = identity(n);

    let off_norm = |a: &CMatrix| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += a[[i, j]].norm_sqr();
                }
            }
        }
        s.sqrt()
    };

    let frob = a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let tol = f64::EPSILON * frob.max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        if off_norm(&a) <= tol {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let b = a[[p, q]];
                let beta = b.norm();
                if beta <= f64::MIN_POSITIVE || beta < 1e-3 * tol / (n as f64) {
                    continue;
                }
                let phase = b / beta; // e^{iφ}
                let app = a[[p, p]].re;
                let aqq = a[[q, q]].re;
                let theta = (aqq - app) / (2.0 * beta);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                let ph_conj = phase.conj();
                // Columns: G = [[c, s], [-s e^{-iφ}, c e^{-iφ}]].
                for k in 0..n {
                    let akp = a[[k, p]];
                    let akq = a[[k, q]];
                    a[[k, p]] = akp * c - akq * ph_conj * s;
                    a[[k, q]] = akp * s + akq * ph_conj * c;
                }
                for k in 0..n {
                    let apk = a[[p, k]];
                    let aqk = a[[q, k]];
                    a[[p, k]] = apk * c - aqk * phase * s;
                    a[[q, k]] = apk * s + aqk * phase * c;
                }
                a[[p, q]] = ZERO;
                a[[q, p]] = ZERO;
                a[[p, p]] = C64::new(a[[p, p]].re, 0.0);
                a[[q, q]] = C64::new(a[[q, q]].re, 0.0);
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = vkp * c - vkq * ph_conj * s;
                    v[[k, q]] = vkp * s + vkq * ph_conj * c;
                }
            }
        }
    }
    if off_norm(&a) > 1e-9 * frob.max(1.0) {
        return Err(FitError::NumericalInstability {
            step: 0,
            reason: "Jacobi eigensolver did not converge".into(),
        });
    }

    let dominant = |k: usize| -> usize {
        let mut best = 0;
        let mut val = -1.0;
        for i in 0..n {
            let x = v[[i, k]].norm();
            if x > val + 1e-12 {
                val = x;
                best = i;
            }
        }
        best
    };
    let mut order: Vec<(f64, usize, usize)> = (0..n).map(|k| (a[[k, k]].re, dominant(k), k)).collect();
    order.sort_by(|x, y| x.0.total_cmp(&y.0));
    // Runs of values equal to roundoff are ties, ordered by dominant component.
    let spread = scale * 1e-12;
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && order[end].0 - order[end - 1].0 <= spread {
            end += 1;
        }
        order[start..end].sort_by_key(|o| o.1);
        start = end;
    }

    let values = order.iter().map(|o| o.0).collect();
    let mut vectors = Array2::zeros((n, n));
    for (dst, o) in order.iter().enumerate() {
        // Fix the global phase: dominant component real positive.
        let ph = v[[o.1, o.2]];
        let ph = if ph.norm() > 0.0 { ph.conj() / ph.norm() } else { ONE };
        for i in 0..n {
            vectors[[i, dst]] = v[[i, o.2]] * ph;
        }
    }
    Ok(HermitianEigen { values, vectors })
}
