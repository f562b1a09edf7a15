//! Dense kernels that nalgebra does not provide: a Bunch–Kaufman symmetric
//! indefinite factorization, unpreconditioned MINRES, and a power-iteration
//! operator norm.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Growth-balancing constant of the partial pivoting rule, `(1 + √17)/8`.
const BK_ALPHA: f64 = 0.640_388_203_202_208_2;

#[derive(Debug, Clone, Copy)]
enum Pivot {
    One(f64),
    /// Symmetric 2×2 block `[[a, b], [b, c]]`.
    Two(f64, f64, f64),
}

/// `P A Pᵀ = L D Lᵀ` with unit lower-triangular `L` and 1×1/2×2 blocks in `D`.
#[derive(Debug, Clone)]
pub struct BunchKaufman {
    l: DMatrix<f64>,
    blocks: Vec<Pivot>,
    perm: Vec<usize>,
}

impl BunchKaufman {
    /// Factors the symmetric matrix `a`; only the lower triangle is read.
    pub fn factor(a: &DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::Contract(format!("expected a square matrix, got {}x{}", n, a.ncols())));
        }
        let mut w = DMatrix::<f64>::zeros(n, n);
        for j in 0..n {
            for i in j..n {
                w[(i, j)] = a[(i, j)];
                w[(j, i)] = a[(i, j)];
            }
        }
        let mut l = DMatrix::<f64>::identity(n, n);
        let mut perm: Vec<usize> = (0..n).collect();
        let mut blocks = Vec::with_capacity(n);

        let mut k = 0;
        while k < n {
            let absakk = w[(k, k)].abs();
            let (imax, colmax) =
                ((k + 1)..n).map(|i| (i, w[(i, k)].abs())).fold((k, 0.0), |acc, c| if c.1 > acc.1 { c } else { acc });
            if absakk.max(colmax) == 0.0 || !absakk.max(colmax).is_finite() {
                return Err(Error::Factorization(format!("zero or non-finite pivot column at step {k}")));
            }

            let (kp, two) = if absakk >= BK_ALPHA * colmax {
                (k, false)
            } else {
                let rowmax = (k..n).filter(|&j| j != imax).map(|j| w[(imax, j)].abs()).fold(0.0, f64::max);
                if absakk * rowmax >= BK_ALPHA * colmax * colmax {
                    (k, false)
                } else if w[(imax, imax)].abs() >= BK_ALPHA * rowmax {
                    (imax, false)
                } else {
                    (imax, true)
                }
            };
            let step = if two { 2 } else { 1 };
            let kk = k + step - 1;
            if kp != kk {
                w.swap_rows(kk, kp);
                w.swap_columns(kk, kp);
                for j in 0..k {
                    l.swap((kk, j), (kp, j));
                }
                perm.swap(kk, kp);
            }

            if !two {
                let d = w[(k, k)];
                for i in (k + 1)..n {
                    l[(i, k)] = w[(i, k)] / d;
                }
                for j in (k + 1)..n {
                    let ljd = l[(j, k)] * d;
                    if ljd == 0.0 {
                        continue;
                    }
                    for i in (k + 1)..n {
                        w[(i, j)] -= l[(i, k)] * ljd;
                    }
                }
                blocks.push(Pivot::One(d));
            } else {
                let (d11, d21, d22) = (w[(k, k)], w[(k + 1, k)], w[(k + 1, k + 1)]);
                let det = d11 * d22 - d21 * d21;
                for i in (k + 2)..n {
                    let (c1, c2) = (w[(i, k)], w[(i, k + 1)]);
                    l[(i, k)] = (c1 * d22 - c2 * d21) / det;
                    l[(i, k + 1)] = (c2 * d11 - c1 * d21) / det;
                }
                for j in (k + 2)..n {
                    let (c1, c2) = (w[(j, k)], w[(j, k + 1)]);
                    for i in (k + 2)..n {
                        w[(i, j)] -= l[(i, k)] * c1 + l[(i, k + 1)] * c2;
                    }
                }
                blocks.push(Pivot::Two(d11, d21, d22));
            }
            k += step;
        }
        Ok(BunchKaufman { l, blocks, perm })
    }

    pub fn dim(&self) -> usize {
        self.perm.len()
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let n = self.dim();
        let l = &self.l;
        let mut z = DVector::from_fn(n, |i, _| b[self.perm[i]]);
        for j in 0..n {
            let zj = z[j];
            if zj != 0.0 {
                for i in (j + 1)..n {
                    z[i] -= l[(i, j)] * zj;
                }
            }
        }
        let mut k = 0;
        for blk in &self.blocks {
            match *blk {
                Pivot::One(d) => {
                    z[k] /= d;
                    k += 1;
                }
                Pivot::Two(a, b, c) => {
                    let det = a * c - b * b;
                    let (z1, z2) = (z[k], z[k + 1]);
                    z[k] = (c * z1 - b * z2) / det;
                    z[k + 1] = (a * z2 - b * z1) / det;
                    k += 2;
                }
            }
        }
        for j in (0..n).rev() {
            let mut s = z[j];
            for i in (j + 1)..n {
                s -= l[(i, j)] * z[i];
            }
            z[j] = s;
        }
        let mut x = DVector::zeros(n);
        for i in 0..n {
            x[self.perm[i]] = z[i];
        }
        x
    }

    /// Solve followed by one pass of iterative refinement against `a`.
    pub fn solve_refined(&self, a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
        let mut x = self.solve(b);
        let r = b - a * &x;
        x += self.solve(&r);
        x
    }

    /// Counts of (positive, negative, zero) eigenvalues, by Sylvester's law.
    pub fn inertia(&self) -> (usize, usize, usize) {
        let (mut pos, mut neg, mut zero) = (0, 0, 0);
        for blk in &self.blocks {
            match *blk {
                Pivot::One(d) if d > 0.0 => pos += 1,
                Pivot::One(d) if d < 0.0 => neg += 1,
                Pivot::One(_) => zero += 1,
                Pivot::Two(a, b, c) => {
                    let det = a * c - b * b;
                    if det < 0.0 {
                        pos += 1;
                        neg += 1;
                    } else if a + c > 0.0 {
                        pos += 2;
                    } else {
                        neg += 2;
                    }
                }
            }
        }
        (pos, neg, zero)
    }
}

#[derive(Debug, Clone)]
pub struct MinresOutcome {
    pub x: DVector<f64>,
    pub iterations: usize,
    /// Recurrence estimate of `‖b − A x‖ / ‖b‖`.
    pub relative_residual: f64,
}

/// MINRES for symmetric (possibly indefinite) `A`, stopped at relative
/// residual `rtol` or after `max_iter` Lanczos steps.
pub fn minres<F>(apply: F, b: &DVector<f64>, rtol: f64, max_iter: usize) -> MinresOutcome
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let n = b.len();
    let mut x = DVector::zeros(n);
    let beta1 = b.norm();
    if beta1 == 0.0 {
        return MinresOutcome { x, iterations: 0, relative_residual: 0.0 };
    }
    let mut r1 = b.clone();
    let mut r2 = b.clone();
    let mut y = b.clone();
    let (mut oldb, mut beta) = (0.0, beta1);
    let (mut dbar, mut epsln) = (0.0, 0.0);
    let mut phibar = beta1;
    let (mut cs, mut sn) = (-1.0_f64, 0.0_f64);
    let mut w = DVector::zeros(n);
    let mut w2 = DVector::zeros(n);
    let mut iterations = 0;

    for itn in 1..=max_iter {
        iterations = itn;
        let v = &y / beta;
        y = apply(&v);
        if itn >= 2 {
            y.axpy(-beta / oldb, &r1, 1.0);
        }
        let alfa = v.dot(&y);
        y.axpy(-alfa / beta, &r2, 1.0);
        r1 = std::mem::replace(&mut r2, y.clone());
        oldb = beta;
        beta = y.norm();

        let oldeps = epsln;
        let delta = cs * dbar + sn * alfa;
        let gbar = sn * dbar - cs * alfa;
        epsln = sn * beta;
        dbar = -cs * beta;
        let gamma = gbar.hypot(beta).max(f64::EPSILON);
        cs = gbar / gamma;
        sn = beta / gamma;
        let phi = cs * phibar;
        phibar *= sn;

        let w1 = std::mem::replace(&mut w2, w.clone());
        w = (&v - &w1 * oldeps - &w2 * delta) / gamma;
        x.axpy(phi, &w, 1.0);

        if phibar / beta1 <= rtol || beta == 0.0 {
            break;
        }
    }
    MinresOutcome { x, iterations, relative_residual: phibar / beta1 }
}

/// Largest singular value of `a` by power iteration on `AᵀA`. The stopping
/// test on successive estimates is two decades tighter than `rtol` so slow
/// convergence does not stop early.
pub fn spectral_norm(a: &DMatrix<f64>, rtol: f64) -> f64 {
    let n = a.ncols();
    if a.nrows() == 0 || n == 0 {
        return 0.0;
    }
    // Deterministic, generically non-orthogonal start vector.
    let mut v = DVector::from_fn(n, |j, _| 1.0 + ((j as f64 * 0.618_033_988_75).fract()));
    v.normalize_mut();
    let mut est = 0.0_f64;
    for _ in 0..100_000 {
        let av = a * &v;
        let mut atav = a.tr_mul(&av);
        let next = av.norm_squared();
        let nrm = atav.norm();
        if nrm == 0.0 {
            return 0.0;
        }
        atav /= nrm;
        v = atav;
        if (next - est).abs() <= 1e-2 * rtol * next {
            est = next;
            break;
        }
        est = next;
    }
    est.sqrt()
}
