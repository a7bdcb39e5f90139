//! Dense linear algebra kept deliberately small: LU determinants and
//! solves for the matrix sizes this crate actually meets (Green's
//! function determinants N ≤ 12, Fredholm blocks up to ~2000, Gram
//! matrices n ≤ 10).

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("matrix is numerically singular (condition estimate {cond:.3e} exceeds {limit:.3e})")]
    Singular { cond: f64, limit: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// Square matrix in row-major storage.
#[derive(Debug, Clone)]
pub struct Matrix {
    pub n: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(n: usize) -> Self {
        Matrix {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Matrix::zeros(n);
        for i in 0..n {
            for j in 0..n {
                m.data[i * n + j] = f(i, j);
            }
        }
        m
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }
}

/// Determinant by LU with partial pivoting. Consumes the matrix.
pub fn det_lu(mut m: Matrix) -> f64 {
    let n = m.n;
    let a = &mut m.data;
    let mut det = 1.0;
    for col in 0..n {
        let mut piv = col;
        let mut best = a[col * n + col].abs();
        for r in col + 1..n {
            let v = a[r * n + col].abs();
            if v > best {
                best = v;
                piv = r;
            }
        }
        if best == 0.0 {
            return 0.0;
        }
        if piv != col {
            for j in 0..n {
                a.swap(col * n + j, piv * n + j);
            }
            det = -det;
        }
        let d = a[col * n + col];
        det *= d;
        let inv = 1.0 / d;
        for r in col + 1..n {
            let factor = a[r * n + col] * inv;
            if factor == 0.0 {
                continue;
            }
            a[r * n + col] = 0.0;
            let (upper, lower) = a.split_at_mut(r * n);
            let src = &upper[col * n + col + 1..col * n + n];
            let dst = &mut lower[col + 1..n];
            for (x, s) in dst.iter_mut().zip(src) {
                *x -= factor * s;
            }
        }
    }
    det
}

/// Solve `A x = b` for several right-hand sides by LU with full pivoting,
/// guarding against ill-conditioning via the pivot ratio.
///
/// Returns the solutions (one per right-hand side) or an error when the
/// pivot-ratio condition estimate exceeds `cond_limit`.
pub fn solve_full_pivot(
    a: &Matrix,
    rhs: &[Vec<f64>],
    cond_limit: f64,
) -> Result<Vec<Vec<f64>>, LinalgError> {
    let n = a.n;
    for (k, b) in rhs.iter().enumerate() {
        if b.len() != n {
            return Err(LinalgError::Dimension(format!(
                "rhs {k} has length {} but matrix is {n}x{n}",
                b.len()
            )));
        }
    }
    let mut lu = a.data.clone();
    let mut row_perm: Vec<usize> = (0..n).collect();
    let mut col_perm: Vec<usize> = (0..n).collect();
    let mut max_piv: f64 = 0.0;
    let mut min_piv = f64::INFINITY;

    for step in 0..n {
        let mut best = -1.0;
        let (mut pr, mut pc) = (step, step);
        for r in step..n {
            for c in step..n {
                let v = lu[r * n + c].abs();
                if v > best {
                    best = v;
                    pr = r;
                    pc = c;
                }
            }
        }
        if best <= 0.0 {
            return Err(LinalgError::Singular {
                cond: f64::INFINITY,
                limit: cond_limit,
            });
        }
        if pr != step {
            for j in 0..n {
                lu.swap(step * n + j, pr * n + j);
            }
            row_perm.swap(step, pr);
        }
        if pc != step {
            for r in 0..n {
                lu.swap(r * n + step, r * n + pc);
            }
            col_perm.swap(step, pc);
        }
        let d = lu[step * n + step];
        max_piv = max_piv.max(d.abs());
        min_piv = min_piv.min(d.abs());
        for r in step + 1..n {
            let factor = lu[r * n + step] / d;
            lu[r * n + step] = factor;
            for c in step + 1..n {
                lu[r * n + c] -= factor * lu[step * n + c];
            }
        }
    }
    let cond = max_piv / min_piv;
    if !cond.is_finite() || cond > cond_limit {
        return Err(LinalgError::Singular {
            cond,
            limit: cond_limit,
        });
    }

    let mut out = Vec::with_capacity(rhs.len());
    for b in rhs {
        // forward substitution on the permuted rhs
        let mut y: Vec<f64> = (0..n).map(|i| b[row_perm[i]]).collect();
        for i in 1..n {
            for j in 0..i {
                y[i] -= lu[i * n + j] * y[j];
            }
        }
        // back substitution
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let mut v = y[i];
            for j in i + 1..n {
                v -= lu[i * n + j] * x[j];
            }
            x[i] = v / lu[i * n + i];
        }
        // undo column permutation
        let mut sol = vec![0.0; n];
        for i in 0..n {
            sol[col_perm[i]] = x[i];
        }
        out.push(sol);
    }
    Ok(out)
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`, by Newton iteration on
/// the Legendre recurrence. Accurate to machine precision for n ≤ ~500.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, d) = legendre_and_deriv(n, x);
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre_and_deriv(n, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

fn legendre_and_deriv(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}
