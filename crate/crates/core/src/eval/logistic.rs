//! Five-parameter logistic mapping from predictions to subjective scores:
//! `f(x) = b1 (1/2 - 1/(1 + exp(b2 (x - b3)))) + b4 x + b5`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_ITERATIONS: usize = 200;
/// Stop when the relative decrease of the residual sum of squares falls
/// below this.
pub const REL_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    pub beta: [f64; 5],
    pub converged: bool,
    /// `sqrt(sum (f(x_i) - s_i)^2)`.
    pub residual_norm: f64,
    pub iterations: usize,
}

/// `1/2 - 1/(1 + e^t)`, written to avoid overflow for large `|t|`.
fn half_logistic(t: f64) -> f64 {
    let sig = if t >= 0.0 { 1.0 / (1.0 + (-t).exp()) } else { t.exp() / (1.0 + t.exp()) };
    sig - 0.5
}

pub fn logistic(beta: &[f64; 5], x: f64) -> f64 {
    let [b1, b2, b3, b4, b5] = *beta;
    b1 * half_logistic(b2 * (x - b3)) + b4 * x + b5
}

impl LogisticFit {
    pub fn eval(&self, x: f64) -> f64 {
        logistic(&self.beta, x)
    }

    pub fn map(&self, xs: &[f64]) -> Vec<f64> {
        xs.iter().map(|&x| self.eval(x)).collect()
    }
}

fn sse(beta: &[f64; 5], x: &[f64], s: &[f64]) -> f64 {
    x.iter().zip(s).map(|(&xi, &si)| (logistic(beta, xi) - si).powi(2)).sum()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn std_dev(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
}

/// Least-squares line `s = b4 x + b5`.
fn linear_fit(x: &[f64], s: &[f64]) -> (f64, f64) {
    let (mx, ms) = (mean(x), mean(s));
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxs: f64 = x.iter().zip(s).map(|(a, b)| (a - mx) * (b - ms)).sum();
    let slope = sxs / sxx;
    (slope, ms - slope * mx)
}

/// Solves the 5x5 system `a z = b` by Gaussian elimination with partial
/// pivoting; `None` when singular.
fn solve5(mut a: [[f64; 5]; 5], mut b: [f64; 5]) -> Option<[f64; 5]> {
    for col in 0..5 {
        let piv = (col..5).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 || !a[piv][col].is_finite() {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..5 {
            let f = a[row][col] / a[col][col];
            for k in col..5 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut z = [0.0; 5];
    for row in (0..5).rev() {
        let tail: f64 = (row + 1..5).map(|k| a[row][k] * z[k]).sum();
        z[row] = (b[row] - tail) / a[row][row];
    }
    z.iter().all(|v| v.is_finite()).then_some(z)
}

/// Damped Gauss-Newton (Levenberg-Marquardt) from `start`.
fn gauss_newton(start: [f64; 5], x: &[f64], s: &[f64]) -> (LogisticFit, f64) {
    let mut beta = start;
    let mut cur = sse(&beta, x, s);
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let mut jtj = [[0.0; 5]; 5];
        let mut jtr = [0.0; 5];
        let [b1, b2, b3, _, _] = beta;
        for (&xi, &si) in x.iter().zip(s) {
            let t = b2 * (xi - b3);
            let h = half_logistic(t);
            let sig = h + 0.5;
            let dsig = sig * (1.0 - sig);
            let j = [h, b1 * dsig * (xi - b3), -b1 * dsig * b2, xi, 1.0];
            let r = si - logistic(&beta, xi);
            for p in 0..5 {
                jtr[p] += j[p] * r;
                for q in 0..5 {
                    jtj[p][q] += j[p] * j[q];
                }
            }
        }
        let scale = (0..5).map(|p| jtj[p][p]).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        let mut improved = false;
        while lambda < 1e16 {
            let mut a = jtj;
            for (p, row) in a.iter_mut().enumerate() {
                row[p] += lambda * (jtj[p][p] + 1e-12 * scale);
            }
            if let Some(delta) = solve5(a, jtr) {
                let cand: [f64; 5] = std::array::from_fn(|p| beta[p] + delta[p]);
                let next = sse(&cand, x, s);
                if next.is_finite() && next < cur {
                    let rel = (cur - next) / cur;
                    beta = cand;
                    cur = next;
                    lambda = (lambda / 10.0).max(1e-12);
                    improved = true;
                    if rel < REL_TOLERANCE {
                        converged = true;
                    }
                    break;
                }
            }
            lambda *= 10.0;
        }
        // no damped step lowers the residual: a stationary point
        if !improved || cur == 0.0 {
            converged = true;
        }
        if converged {
            break;
        }
    }
    let fit = LogisticFit { beta, converged, residual_norm: cur.sqrt(), iterations };
    (fit, cur)
}

/// Fits the logistic mapping from predictions `pred` to scores `s`.
///
/// Two starts are tried: the data-driven initialization
/// (`b1 = range(s)`, `b2 = 1/std(pred)`, `b3 = mean(pred)`, `b4 = 0`,
/// `b5 = mean(s)`) and the least-squares line. The converged fit with the
/// smaller residual wins; if neither converges the line is returned with
/// `converged = false`.
pub fn fit_logistic(pred: &[f64], s: &[f64]) -> Result<LogisticFit> {
    if pred.len() != s.len() {
        return Err(Error::shape(format!("{} predictions but {} scores", pred.len(), s.len())));
    }
    if pred.len() < 5 {
        return Err(Error::domain(format!("logistic fit needs at least 5 points, got {}", pred.len())));
    }
    if pred.iter().chain(s).any(|v| !v.is_finite()) {
        return Err(Error::domain("logistic fit needs finite inputs"));
    }
    let (sd_pred, sd_s) = (std_dev(pred), std_dev(s));
    if sd_pred == 0.0 || sd_s == 0.0 {
        return Err(Error::domain("logistic fit needs non-constant predictions and scores"));
    }
    let range = s.iter().copied().fold(f64::NEG_INFINITY, f64::max) - s.iter().copied().fold(f64::INFINITY, f64::min);
    let (slope, intercept) = linear_fit(pred, s);
    let starts = [
        [range, 1.0 / sd_pred, mean(pred), 0.0, mean(s)],
        [0.0, 1.0 / sd_pred, mean(pred), slope, intercept],
    ];
    let best = starts
        .iter()
        .map(|&b| gauss_newton(b, pred, s))
        .filter(|(f, e)| f.converged && e.is_finite() && f.beta.iter().all(|b| b.is_finite()))
        .min_by(|a, b| a.1.total_cmp(&b.1));
    Ok(match best {
        Some((fit, _)) => fit,
        None => {
            log::warn!("logistic fit did not converge; using the linear map");
            let beta = [0.0, 0.0, 0.0, slope, intercept];
            LogisticFit { beta, converged: false, residual_norm: sse(&beta, pred, s).sqrt(), iterations: MAX_ITERATIONS }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::pearson;
    use proptest::prelude::*;

    #[test]
    fn affine_data_maps_exactly() {
        let x: Vec<f64> = (0..20).map(|i| f64::from(i) * 0.37 - 2.0).collect();
        let s: Vec<f64> = x.iter().map(|v| 3.0 * v - 1.0).collect();
        let fit = fit_logistic(&x, &s).unwrap();
        assert!(fit.converged);
        assert!((pearson(&fit.map(&x), &s).unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn constant_input_rejected() {
        assert!(fit_logistic(&[1.0; 6], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).is_err());
        assert!(fit_logistic(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[2.0; 6]).is_err());
        assert!(fit_logistic(&[1.0, 2.0, 3.0, 4.0], &[1.0, 2.0, 3.0, 4.0]).is_err());
    }

    #[test]
    fn no_overflow_for_large_arguments() {
        assert_eq!(half_logistic(1e6), 0.5);
        assert_eq!(half_logistic(-1e6), -0.5);
        assert_eq!(half_logistic(0.0), 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn finite_and_no_worse_than_raw(pts in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 5..40)) {
            let x: Vec<f64> = pts.iter().map(|p| p.0).collect();
            let s: Vec<f64> = pts.iter().map(|p| p.1).collect();
            let fit = fit_logistic(&x, &s).unwrap();
            prop_assert!(fit.beta.iter().all(|b| b.is_finite()));
            prop_assert!(fit.map(&x).iter().all(|v| v.is_finite()));
            if fit.converged {
                if let Ok(mapped) = pearson(&fit.map(&x), &s) {
                    prop_assert!(mapped >= pearson(&x, &s).unwrap() - 1e-9);
                }
            }
        }
    }
}
