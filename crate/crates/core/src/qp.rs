//! Dense strictly convex quadratic programs
//!
//! ```text
//!     minimize    1/2 x' H x + g' x
//!     subject to  A x >= b
//! ```
//!
//! solved with the dual active-set method of Goldfarb and Idnani. The
//! factorisation `H = L L'` is computed once; the active set is maintained
//! through the pair `(J, R)` with `J = L^-T Q` and `R` upper triangular, and
//! updated by Givens rotations when constraints enter or leave.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("Hessian is not positive definite")]
    NotPositiveDefinite,
    #[error("constraints are infeasible")]
    Infeasible,
    #[error("active-set iteration limit reached")]
    IterationLimit,
    #[error("dimension mismatch: {0}")]
    Dimension(&'static str),
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    /// One multiplier per constraint row; zero for inactive rows.
    pub multipliers: DVector<f64>,
    pub active: Vec<usize>,
    pub iterations: usize,
}

fn givens(a: f64, b: f64) -> Option<(f64, f64, f64)> {
    let h = a.hypot(b);
    if h == 0.0 {
        return None;
    }
    let (mut c, mut s) = (a / h, b / h);
    let mut r = h;
    if c < 0.0 {
        c = -c;
        s = -s;
        r = -h;
    }
    Some((c, s, r))
}

/// Rotates columns `i`, `i + 1` of `m` in place.
fn rotate_columns(m: &mut DMatrix<f64>, i: usize, c: f64, s: f64) {
    let nu = s / (1.0 + c);
    for k in 0..m.nrows() {
        let t1 = m[(k, i)];
        let t2 = m[(k, i + 1)];
        let first = t1 * c + t2 * s;
        m[(k, i)] = first;
        m[(k, i + 1)] = nu * (t1 + first) - t2;
    }
}

struct ActiveSet {
    n: usize,
    j: DMatrix<f64>,
    r: DMatrix<f64>,
    q: usize,
    r_norm: f64,
}

impl ActiveSet {
    /// Appends the column `d = J' n_p`, rotating `d[q+1..]` to zero.
    fn add(&mut self, d: &mut DVector<f64>) -> bool {
        let n = self.n;
        let q = self.q;
        for j in (q + 1..n).rev() {
            if let Some((c, s, h)) = givens(d[j - 1], d[j]) {
                d[j] = 0.0;
                d[j - 1] = h;
                rotate_columns(&mut self.j, j - 1, c, s);
            }
        }
        for i in 0..=q {
            self.r[(i, q)] = d[i];
        }
        self.q += 1;
        let diag = d[q].abs();
        if diag <= f64::EPSILON * self.r_norm {
            return false;
        }
        self.r_norm = self.r_norm.max(diag);
        true
    }

    /// Removes the `l`-th active column and restores triangularity.
    fn remove(&mut self, l: usize) {
        let q = self.q;
        for col in l..q - 1 {
            for row in 0..self.n {
                self.r[(row, col)] = self.r[(row, col + 1)];
            }
        }
        for row in 0..self.n {
            self.r[(row, q - 1)] = 0.0;
        }
        self.q -= 1;
        let q = self.q;
        for j in l..q {
            let Some((c, s, h)) = givens(self.r[(j, j)], self.r[(j + 1, j)]) else {
                continue;
            };
            self.r[(j, j)] = h;
            self.r[(j + 1, j)] = 0.0;
            let nu = s / (1.0 + c);
            for k in j + 1..q {
                let t1 = self.r[(j, k)];
                let t2 = self.r[(j + 1, k)];
                let first = t1 * c + t2 * s;
                self.r[(j, k)] = first;
                self.r[(j + 1, k)] = nu * (t1 + first) - t2;
            }
            rotate_columns(&mut self.j, j, c, s);
        }
    }

    /// Primal direction `z = J2 J2' n_p` from `d = J' n_p`.
    fn primal_direction(&self, d: &DVector<f64>) -> DVector<f64> {
        let mut z = DVector::zeros(self.n);
        for j in self.q..self.n {
            z.axpy(d[j], &self.j.column(j), 1.0);
        }
        z
    }

    /// Dual direction `r = R^-1 d[..q]`.
    fn dual_direction(&self, d: &DVector<f64>) -> DVector<f64> {
        let q = self.q;
        let mut r = DVector::zeros(q);
        for i in (0..q).rev() {
            let mut sum = d[i];
            for k in i + 1..q {
                sum -= self.r[(i, k)] * r[k];
            }
            r[i] = sum / self.r[(i, i)];
        }
        r
    }
}

/// Solves the program; `a` holds one constraint per row.
pub fn solve_qp(h: &DMatrix<f64>, g: &DVector<f64>, a: &DMatrix<f64>, b: &DVector<f64>) -> Result<QpSolution, QpError> {
    let n = g.len();
    let m = b.len();
    if h.nrows() != n || h.ncols() != n {
        return Err(QpError::Dimension("Hessian must be n x n"));
    }
    if a.nrows() != m || (m > 0 && a.ncols() != n) {
        return Err(QpError::Dimension("constraint matrix must be m x n"));
    }
    let chol = h.clone().cholesky().ok_or(QpError::NotPositiveDefinite)?;
    let l = chol.l();
    let linv = l
        .solve_lower_triangular(&DMatrix::identity(n, n))
        .ok_or(QpError::NotPositiveDefinite)?;
    let mut set = ActiveSet {
        n,
        j: linv.transpose(),
        r: DMatrix::zeros(n, n),
        q: 0,
        r_norm: 1.0,
    };

    // unconstrained minimum
    let mut x = -chol.solve(g);
    let mut f = 0.5 * g.dot(&x);

    // constraint normals as contiguous columns
    let at = a.transpose();
    let row_norms: Vec<f64> = (0..m).map(|i| at.column(i).norm()).collect();
    let mut active: Vec<usize> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    let mut is_active = vec![false; m];
    let tol = 1e-12;
    let max_iter = 50 * (n + m) + 100;
    let mut iterations = 0;

    let slack = |x: &DVector<f64>, i: usize| at.column(i).dot(x) - b[i];

    loop {
        // most violated constraint, scaled by row norm
        let mut p = None;
        let mut worst = 0.0;
        for i in 0..m {
            if is_active[i] {
                continue;
            }
            let s = slack(&x, i);
            let scaled = s / row_norms[i].max(1e-300);
            if scaled < worst - tol {
                worst = scaled;
                p = Some(i);
            }
        }
        let Some(p) = p else {
            break;
        };
        let np: DVector<f64> = at.column(p).into_owned();
        let mut u_new = 0.0;

        loop {
            iterations += 1;
            if iterations > max_iter {
                return Err(QpError::IterationLimit);
            }
            let mut d = set.j.transpose() * &np;
            let z = set.primal_direction(&d);
            let r = set.dual_direction(&d);

            // largest dual step keeping multipliers non-negative
            let mut t1 = f64::INFINITY;
            let mut drop = None;
            for k in 0..set.q {
                if r[k] > 0.0 {
                    let ratio = u[k] / r[k];
                    if ratio < t1 {
                        t1 = ratio;
                        drop = Some(k);
                    }
                }
            }
            let zn = z.dot(&np);
            let sp = slack(&x, p);
            let t2 = if z.amax() > f64::EPSILON * 1e3 && zn > 0.0 {
                -sp / zn
            } else {
                f64::INFINITY
            };
            let t = t1.min(t2);
            if !t.is_finite() {
                return Err(QpError::Infeasible);
            }
            if t2.is_infinite() {
                // dual-only step
                for k in 0..set.q {
                    u[k] -= t * r[k];
                }
                u_new += t;
                let k = drop.expect("finite t1 has a blocking constraint");
                is_active[active[k]] = false;
                active.remove(k);
                u.remove(k);
                set.remove(k);
                continue;
            }
            x.axpy(t, &z, 1.0);
            f += t * zn * (0.5 * t + u_new);
            for k in 0..set.q {
                u[k] -= t * r[k];
            }
            u_new += t;
            if t2 <= t1 {
                if !set.add(&mut d) {
                    // linearly dependent with the active set
                    set.q -= 1;
                    return Err(QpError::Infeasible);
                }
                active.push(p);
                u.push(u_new);
                is_active[p] = true;
                break;
            }
            let k = drop.expect("partial step has a blocking constraint");
            is_active[active[k]] = false;
            active.remove(k);
            u.remove(k);
            set.remove(k);
        }
    }

    let mut multipliers = DVector::zeros(m);
    for (k, &i) in active.iter().enumerate() {
        multipliers[i] = u[k];
    }
    Ok(QpSolution {
        x,
        objective: f,
        multipliers,
        active,
        iterations,
    })
}
