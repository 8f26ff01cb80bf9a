//! Small dense Levenberg-Marquardt solver for the handful-of-parameters fits
//! used here (calibration histogram, Gaussian marginals).

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Stop when the relative chi2 decrease falls below this.
    pub ftol: f64,
    /// Stop when the relative parameter step falls below this.
    pub xtol: f64,
    pub initial_lambda: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions {
            max_iterations: 200,
            ftol: 1e-10,
            xtol: 1e-10,
            initial_lambda: 1e-3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LmReport {
    pub params: Vec<f64>,
    pub chi2: f64,
    pub iterations: usize,
    /// `(J^T J)^-1` at the solution, unscaled.
    pub covariance: Option<Vec<Vec<f64>>>,
}

fn chi2(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

fn jacobian<F>(f: &F, p: &[f64], r0: &[f64]) -> Vec<Vec<f64>>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    // Column-major: jac[k][i] = d r_i / d p_k.
    let mut jac = Vec::with_capacity(p.len());
    let mut q = p.to_vec();
    for k in 0..p.len() {
        let h = 1e-6 * p[k].abs().max(1e-6);
        q[k] = p[k] + h;
        let rp = f(&q);
        q[k] = p[k] - h;
        let rm = f(&q);
        q[k] = p[k];
        debug_assert_eq!(rp.len(), r0.len());
        jac.push(rp.iter().zip(&rm).map(|(a, b)| (a - b) / (2.0 * h)).collect());
    }
    jac
}

/// Solve `a x = b` for a small dense system by Gaussian elimination with
/// partial pivoting.
pub fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            let (top, rest) = a.split_at_mut(row);
            for (t, p) in rest[0][col..].iter_mut().zip(&top[col][col..]) {
                *t -= factor * p;
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

fn invert(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let mut cols = Vec::with_capacity(n);
    for k in 0..n {
        let mut e = vec![0.0; n];
        e[k] = 1.0;
        cols.push(solve_dense(a.to_vec(), e)?);
    }
    Some((0..n).map(|i| (0..n).map(|j| cols[j][i]).collect()).collect())
}

/// Minimize `sum r_i(p)^2` starting from `p0`.
pub fn levenberg_marquardt<F>(residuals: F, p0: &[f64], opts: LmOptions) -> Result<LmReport>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let n = p0.len();
    let mut p = p0.to_vec();
    let mut r = residuals(&p);
    let mut cost = chi2(&r);
    if !cost.is_finite() {
        return Err(Error::FitFailure {
            reason: "non-finite residuals at the initial guess".into(),
            iterations: 0,
            chi2: cost,
        });
    }
    let mut lambda = opts.initial_lambda;
    let mut jtj = vec![vec![0.0; n]; n];

    for iter in 1..=opts.max_iterations {
        let jac = jacobian(&residuals, &p, &r);
        let mut jtr = vec![0.0; n];
        for a in 0..n {
            for b in 0..=a {
                let v: f64 = jac[a].iter().zip(&jac[b]).map(|(x, y)| x * y).sum();
                jtj[a][b] = v;
                jtj[b][a] = v;
            }
            jtr[a] = jac[a].iter().zip(&r).map(|(x, y)| x * y).sum();
        }

        let mut improved = false;
        for _ in 0..30 {
            let mut lhs = jtj.clone();
            for k in 0..n {
                lhs[k][k] += lambda * jtj[k][k].max(1e-300);
            }
            let rhs: Vec<f64> = jtr.iter().map(|v| -v).collect();
            let Some(step) = solve_dense(lhs, rhs) else {
                lambda *= 10.0;
                continue;
            };
            let trial: Vec<f64> = p.iter().zip(&step).map(|(a, b)| a + b).collect();
            let r_trial = residuals(&trial);
            let c_trial = chi2(&r_trial);
            if c_trial.is_finite() && c_trial <= cost {
                let rel_f = (cost - c_trial) / cost.max(1e-300);
                let rel_x = step
                    .iter()
                    .zip(&p)
                    .map(|(s, v)| s.abs() / v.abs().max(1e-12))
                    .fold(0.0, f64::max);
                p = trial;
                r = r_trial;
                cost = c_trial;
                lambda = (lambda / 10.0).max(1e-12);
                improved = true;
                if rel_f < opts.ftol || rel_x < opts.xtol {
                    return Ok(LmReport {
                        covariance: invert(&jtj),
                        params: p,
                        chi2: cost,
                        iterations: iter,
                    });
                }
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            // No downhill step at any damping: we are at a minimum to
            // working precision.
            return Ok(LmReport {
                covariance: invert(&jtj),
                params: p,
                chi2: cost,
                iterations: iter,
            });
        }
    }
    Err(Error::FitFailure {
        reason: "maximum iterations reached".into(),
        iterations: opts.max_iterations,
        chi2: cost,
    })
}
