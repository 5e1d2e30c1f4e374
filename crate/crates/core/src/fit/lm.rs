//! Damped Gauss–Newton (Levenberg–Marquardt) for small weighted problems with
//! analytic gradients and box bounds.

use nalgebra::{DMatrix, DVector};

/// A scalar model `f(x; p)` with its parameter gradient.
pub trait CurveModel {
    fn eval(&self, x: f64, p: &[f64]) -> f64;
    fn grad(&self, x: f64, p: &[f64], out: &mut [f64]);
}

#[derive(Debug, Clone, Copy)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Stop when an accepted step lowers χ² by less than this fraction.
    pub chi2_rtol: f64,
    /// Stop when the relative step norm falls below this.
    pub step_tol: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            chi2_rtol: 1e-10,
            step_tol: 1e-12,
        }
    }
}

pub struct Problem<'a, M: CurveModel> {
    pub model: &'a M,
    pub x: &'a [f64],
    pub y: &'a [f64],
    pub sigma: &'a [f64],
    pub free: &'a [bool],
    pub lower: &'a [f64],
    pub upper: &'a [f64],
}

#[derive(Debug, Clone)]
pub struct LmOutcome {
    pub params: Vec<f64>,
    pub chi2: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Free parameters that ended on a bound.
    pub at_bound: Vec<usize>,
    /// Inverse normal matrix over the free parameters (unscaled).
    pub covariance: Option<DMatrix<f64>>,
    pub reason: &'static str,
}

impl<M: CurveModel> Problem<'_, M> {
    fn free_indices(&self) -> Vec<usize> {
        (0..self.free.len()).filter(|&j| self.free[j]).collect()
    }

    fn chi2(&self, p: &[f64]) -> f64 {
        self.x
            .iter()
            .zip(self.y)
            .zip(self.sigma)
            .map(|((&x, &y), &s)| {
                let r = (y - self.model.eval(x, p)) / s;
                r * r
            })
            .sum()
    }

    /// Weighted Jacobian over free parameters and weighted residuals.
    fn linearize(&self, p: &[f64], free: &[usize]) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.x.len();
        let mut jac = DMatrix::zeros(n, free.len());
        let mut res = DVector::zeros(n);
        let mut g = vec![0.0; p.len()];
        for i in 0..n {
            let s = self.sigma[i];
            res[i] = (self.y[i] - self.model.eval(self.x[i], p)) / s;
            self.model.grad(self.x[i], p, &mut g);
            for (c, &j) in free.iter().enumerate() {
                jac[(i, c)] = g[j] / s;
            }
        }
        (jac, res)
    }

    /// Inverse normal matrix at `p` over the parameters flagged in `free`.
    pub fn covariance_at(&self, p: &[f64], free: &[bool]) -> Option<DMatrix<f64>> {
        let idx: Vec<usize> = (0..free.len()).filter(|&j| free[j]).collect();
        if idx.is_empty() {
            return None;
        }
        let (jac, _) = self.linearize(p, &idx);
        (jac.transpose() * &jac).try_inverse().filter(|c| {
            (0..c.nrows()).all(|k| c[(k, k)].is_finite() && c[(k, k)] >= 0.0)
        })
    }

    pub fn solve(&self, init: &[f64], opts: &LmOptions) -> LmOutcome {
        let free = self.free_indices();
        let mut p: Vec<f64> = init
            .iter()
            .enumerate()
            .map(|(j, &v)| v.clamp(self.lower[j], self.upper[j]))
            .collect();
        let mut chi2 = self.chi2(&p);
        let mut lambda = 1e-3;
        let mut iterations = 0;
        let (mut converged, mut reason) = (false, "iteration limit reached");

        if !free.is_empty() && chi2.is_finite() {
            let (mut jac, mut res) = self.linearize(&p, &free);
            while iterations < opts.max_iterations {
                iterations += 1;
                let jt = jac.transpose();
                let normal = &jt * &jac;
                let gradient = &jt * &res;
                let mut damped = normal.clone();
                for k in 0..free.len() {
                    let d = normal[(k, k)];
                    damped[(k, k)] = d + lambda * if d > 0.0 { d } else { 1.0 };
                }
                let Some(chol) = damped.cholesky() else {
                    lambda *= 10.0;
                    continue;
                };
                let delta = chol.solve(&gradient);
                let mut trial = p.clone();
                for (c, &j) in free.iter().enumerate() {
                    trial[j] = (p[j] + delta[c]).clamp(self.lower[j], self.upper[j]);
                }
                let trial_chi2 = self.chi2(&trial);
                if trial_chi2.is_finite() && trial_chi2 <= chi2 {
                    let rel = if chi2 > 0.0 { (chi2 - trial_chi2) / chi2 } else { 0.0 };
                    let step: f64 = free.iter().map(|&j| (trial[j] - p[j]).powi(2)).sum::<f64>().sqrt();
                    let scale: f64 = free.iter().map(|&j| p[j] * p[j]).sum::<f64>().sqrt();
                    p = trial;
                    chi2 = trial_chi2;
                    lambda = (lambda * 0.1).max(1e-12);
                    (jac, res) = self.linearize(&p, &free);
                    if rel < opts.chi2_rtol {
                        (converged, reason) = (true, "relative chi2 change below tolerance");
                        break;
                    }
                    if step <= opts.step_tol * scale.max(f64::MIN_POSITIVE) {
                        (converged, reason) = (true, "step below tolerance");
                        break;
                    }
                } else {
                    lambda *= 10.0;
                    if lambda > 1e14 {
                        // No downhill step exists at working precision.
                        (converged, reason) = (true, "no further decrease possible");
                        break;
                    }
                }
            }
        } else if free.is_empty() {
            (converged, reason) = (true, "no free parameters");
        } else {
            reason = "non-finite chi2 at the initial point";
        }

        let at_bound = free
            .iter()
            .copied()
            .filter(|&j| p[j] <= self.lower[j] || p[j] >= self.upper[j])
            .collect();
        let covariance = self.covariance_at(&p, self.free);
        LmOutcome {
            params: p,
            chi2,
            iterations,
            converged,
            at_bound,
            covariance,
            reason,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Exp;
    impl CurveModel for Exp {
        fn eval(&self, x: f64, p: &[f64]) -> f64 {
            p[0] * (-x / p[1]).exp()
        }
        fn grad(&self, x: f64, p: &[f64], out: &mut [f64]) {
            let e = (-x / p[1]).exp();
            out[0] = e;
            out[1] = p[0] * e * x / (p[1] * p[1]);
        }
    }

    #[test]
    fn recovers_exponential() {
        let x: Vec<f64> = (0..50).map(|i| i as f64 * 0.2).collect();
        let y: Vec<f64> = x.iter().map(|&x| 3.0 * (-x / 1.7).exp()).collect();
        let sigma = vec![1.0; x.len()];
        let prob = Problem {
            model: &Exp,
            x: &x,
            y: &y,
            sigma: &sigma,
            free: &[true, true],
            lower: &[0.0, 1e-3],
            upper: &[1e3, 1e3],
        };
        let out = prob.solve(&[1.0, 5.0], &LmOptions::default());
        assert!(out.converged, "{}", out.reason);
        assert!((out.params[0] - 3.0).abs() < 1e-8);
        assert!((out.params[1] - 1.7).abs() < 1e-8);
        assert!(out.covariance.is_some());
    }

    #[test]
    fn fixed_parameter_is_untouched() {
        let x: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|&x| 2.0 * (-x / 4.0).exp()).collect();
        let sigma = vec![0.1; x.len()];
        let prob = Problem {
            model: &Exp,
            x: &x,
            y: &y,
            sigma: &sigma,
            free: &[false, true],
            lower: &[0.0, 1e-3],
            upper: &[1e3, 1e3],
        };
        let out = prob.solve(&[2.0, 1.0], &LmOptions::default());
        assert_eq!(out.params[0], 2.0);
        assert!((out.params[1] - 4.0).abs() < 1e-8);
        assert_eq!(out.covariance.unwrap().nrows(), 1);
    }

    #[test]
    fn bound_is_reported() {
        let x: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|&x| 2.0 * (-x / 40.0).exp()).collect();
        let sigma = vec![1.0; x.len()];
        let prob = Problem {
            model: &Exp,
            x: &x,
            y: &y,
            sigma: &sigma,
            free: &[true, true],
            lower: &[0.0, 1e-3],
            upper: &[1e3, 10.0],
        };
        let out = prob.solve(&[1.0, 1.0], &LmOptions::default());
        assert_eq!(out.at_bound, vec![1]);
    }
}
