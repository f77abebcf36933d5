//! Gaussian-process regression with a squared-exponential ARD kernel.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

const LOG_LENGTH_BOUNDS: (f64, f64) = (-3.5, 1.6); // ~0.03 .. ~5
const LOG_SIGNAL_BOUNDS: (f64, f64) = (-3.0, 3.0);
const LOG_NOISE_BOUNDS: (f64, f64) = (-13.8, -1.6); // 1e-6 .. 0.2
const BASE_JITTER: f64 = 1e-9;
/// Log-normal prior on length scales: mean and sd of `ln(length)`.
const LENGTH_PRIOR: (f64, f64) = (-0.7, 1.0);

/// Kernel hyperparameters in log space. Length scales cover the leading
/// continuous inputs; the remaining (one-hot) inputs use unit length scales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub log_length_scales: Vec<f64>,
    pub log_signal_var: f64,
    pub log_noise_var: f64,
}

impl KernelParams {
    pub fn initial(continuous_dims: usize) -> Self {
        Self {
            log_length_scales: vec![(0.3f64).ln(); continuous_dims],
            log_signal_var: 0.0,
            log_noise_var: (1e-4f64).ln(),
        }
    }

    pub fn noise_var(&self) -> f64 {
        self.log_noise_var.exp()
    }

    fn to_vec(&self) -> Vec<f64> {
        let mut v = self.log_length_scales.clone();
        v.push(self.log_signal_var);
        v.push(self.log_noise_var);
        v
    }

    fn from_vec(v: &[f64]) -> Self {
        let n = v.len() - 2;
        Self {
            log_length_scales: v[..n].to_vec(),
            log_signal_var: v[n],
            log_noise_var: v[n + 1],
        }
    }

    fn clamp(&mut self) {
        for l in &mut self.log_length_scales {
            *l = l.clamp(LOG_LENGTH_BOUNDS.0, LOG_LENGTH_BOUNDS.1);
        }
        self.log_signal_var = self.log_signal_var.clamp(LOG_SIGNAL_BOUNDS.0, LOG_SIGNAL_BOUNDS.1);
        self.log_noise_var = self.log_noise_var.clamp(LOG_NOISE_BOUNDS.0, LOG_NOISE_BOUNDS.1);
    }
}

fn signal_kernel(a: &[f64], b: &[f64], p: &KernelParams) -> f64 {
    let mut s = 0.0;
    for (d, (x, y)) in a.iter().zip(b).enumerate() {
        let l2 = p.log_length_scales.get(d).map_or(1.0, |l| (2.0 * l).exp());
        s += (x - y) * (x - y) / l2;
    }
    p.log_signal_var.exp() * (-0.5 * s).exp()
}

fn gram(x: &[Vec<f64>], p: &KernelParams) -> DMatrix<f64> {
    let n = x.len();
    DMatrix::from_fn(n, n, |i, j| signal_kernel(&x[i], &x[j], p))
}

/// Cholesky of `K + (noise + jitter) I`, raising the jitter until it succeeds.
fn factor(k_signal: &DMatrix<f64>, p: &KernelParams) -> (Cholesky<f64, Dyn>, f64) {
    let scale = p.log_signal_var.exp();
    let mut jitter = BASE_JITTER * scale;
    loop {
        let mut k = k_signal.clone();
        for i in 0..k.nrows() {
            k[(i, i)] += p.noise_var() + jitter;
        }
        if let Some(c) = k.cholesky() {
            return (c, jitter);
        }
        jitter *= 10.0;
        assert!(jitter < scale, "kernel matrix is not positive definite");
    }
}

/// A fitted GP over standardized targets.
#[derive(Debug, Clone)]
pub struct GaussianProcess {
    x: Vec<Vec<f64>>,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    y_mean: f64,
    y_scale: f64,
    params: KernelParams,
    jitter: f64,
}

pub(crate) fn standardize(y: &[f64]) -> (Vec<f64>, f64, f64) {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let scale = if var > 0.0 { var.sqrt() } else { 1.0 };
    (y.iter().map(|v| (v - mean) / scale).collect(), mean, scale)
}

impl GaussianProcess {
    pub fn fit(x: Vec<Vec<f64>>, y: &[f64], params: KernelParams) -> Self {
        assert!(!x.is_empty() && x.len() == y.len());
        let (ys, y_mean, y_scale) = standardize(y);
        let (chol, jitter) = factor(&gram(&x, &params), &params);
        let alpha = chol.solve(&DVector::from_vec(ys));
        Self {
            x,
            chol,
            alpha,
            y_mean,
            y_scale,
            params,
            jitter,
        }
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    /// Observation noise plus the diagonal jitter actually used, in target units².
    pub fn noise_floor(&self) -> f64 {
        (self.params.noise_var() + self.jitter) * self.y_scale * self.y_scale
    }

    /// Posterior mean and variance of the latent function, standardized.
    pub(crate) fn predict_standardized(&self, x: &[f64]) -> (f64, f64) {
        let k = DVector::from_iterator(self.x.len(), self.x.iter().map(|xi| signal_kernel(xi, x, &self.params)));
        let mean = k.dot(&self.alpha);
        let v = self.chol.l().solve_lower_triangular(&k).expect("triangular factor is invertible");
        let var = (self.params.log_signal_var.exp() - v.dot(&v)).max(0.0);
        (mean, var)
    }

    /// Posterior mean and variance in target units.
    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        let (m, v) = self.predict_standardized(x);
        (self.y_mean + m * self.y_scale, v * self.y_scale * self.y_scale)
    }

    /// Posterior covariance matrix between the given points, target units.
    pub fn posterior_covariance(&self, xs: &[Vec<f64>]) -> DMatrix<f64> {
        let n = self.x.len();
        let m = xs.len();
        let kx = DMatrix::from_fn(n, m, |i, j| signal_kernel(&self.x[i], &xs[j], &self.params));
        let v = self.chol.l().solve_lower_triangular(&kx).expect("triangular factor is invertible");
        let prior = DMatrix::from_fn(m, m, |i, j| signal_kernel(&xs[i], &xs[j], &self.params));
        let cov = prior - v.transpose() * v;
        let s2 = self.y_scale * self.y_scale;
        (cov.clone() + cov.transpose()) * (0.5 * s2)
    }
}

/// Log marginal likelihood of standardized targets and its gradient in log space.
pub fn log_marginal_likelihood(x: &[Vec<f64>], ys: &[f64], p: &KernelParams) -> (f64, Vec<f64>) {
    let n = x.len();
    let k_signal = gram(x, p);
    let (chol, _) = factor(&k_signal, p);
    let y = DVector::from_column_slice(ys);
    let alpha = chol.solve(&y);
    let log_det: f64 = chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
    let value = -0.5 * y.dot(&alpha) - 0.5 * log_det - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();

    let k_inv = chol.inverse();
    let w = &alpha * alpha.transpose() - k_inv;
    let trace_with = |dk: &DMatrix<f64>| 0.5 * w.component_mul(dk).sum();
    let mut grad = Vec::with_capacity(p.log_length_scales.len() + 2);
    for (d, l) in p.log_length_scales.iter().enumerate() {
        let inv_l2 = (-2.0 * l).exp();
        let dk = DMatrix::from_fn(n, n, |i, j| {
            let diff = x[i][d] - x[j][d];
            k_signal[(i, j)] * diff * diff * inv_l2
        });
        grad.push(trace_with(&dk));
    }
    grad.push(trace_with(&k_signal));
    grad.push(0.5 * p.noise_var() * w.trace());
    (value, grad)
}

/// Log marginal likelihood plus the length-scale log prior, with gradient.
pub fn log_posterior(x: &[Vec<f64>], ys: &[f64], p: &KernelParams) -> (f64, Vec<f64>) {
    let (mut value, mut grad) = log_marginal_likelihood(x, ys, p);
    let (mu, sd) = LENGTH_PRIOR;
    for (g, l) in grad.iter_mut().zip(&p.log_length_scales) {
        let z = (l - mu) / sd;
        value -= 0.5 * z * z;
        *g -= z / sd;
    }
    (value, grad)
}

/// Projected gradient ascent on [`log_posterior`] with a backtracking
/// step, starting from `start`.
pub fn fit_hyperparameters(x: &[Vec<f64>], y: &[f64], start: &KernelParams, iterations: usize) -> KernelParams {
    let (ys, _, _) = standardize(y);
    let mut current = start.clone();
    current.clamp();
    let (mut value, mut grad) = log_posterior(x, &ys, &current);
    let mut step = 0.1;
    for _ in 0..iterations {
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm < 1e-6 {
            break;
        }
        let mut accepted = false;
        while step > 1e-6 {
            let v: Vec<f64> = current
                .to_vec()
                .iter()
                .zip(&grad)
                .map(|(p, g)| p + step * g / norm)
                .collect();
            let mut candidate = KernelParams::from_vec(&v);
            candidate.clamp();
            let (cv, cg) = log_posterior(x, &ys, &candidate);
            if cv > value {
                current = candidate;
                value = cv;
                grad = cg;
                step *= 1.5;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    current
}

#[cfg(test)]
mod tests {
    use super::*;

    fn points() -> (Vec<Vec<f64>>, Vec<f64>) {
        let x: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64 / 7.0, ((i * 3) % 8) as f64 / 7.0]).collect();
        let y = x.iter().map(|p| (3.0 * p[0]).sin() + p[1] * p[1]).collect();
        (x, y)
    }

    #[test]
    fn interpolates_observations() {
        let (x, y) = points();
        let gp = GaussianProcess::fit(x.clone(), &y, KernelParams::initial(2));
        for (xi, yi) in x.iter().zip(&y) {
            let (m, v) = gp.predict(xi);
            assert!((m - yi).abs() <= 3.0 * gp.noise_floor().sqrt() + 1e-6, "{m} vs {yi}");
            assert!(v <= gp.noise_floor() + 1e-12);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (x, y) = points();
        let (ys, _, _) = standardize(&y);
        let p = KernelParams {
            log_length_scales: vec![-0.7, -0.2],
            log_signal_var: 0.3,
            log_noise_var: -4.0,
        };
        let (_, g) = log_marginal_likelihood(&x, &ys, &p);
        let h = 1e-5;
        for i in 0..4 {
            let mut up = p.to_vec();
            let mut dn = p.to_vec();
            up[i] += h;
            dn[i] -= h;
            let fd = (log_marginal_likelihood(&x, &ys, &KernelParams::from_vec(&up)).0
                - log_marginal_likelihood(&x, &ys, &KernelParams::from_vec(&dn)).0)
                / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-4 * (1.0 + fd.abs()), "{i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn hyperparameter_fit_does_not_decrease_objective() {
        let (x, y) = points();
        let (ys, _, _) = standardize(&y);
        let start = KernelParams::initial(2);
        let fitted = fit_hyperparameters(&x, &y, &start, 50);
        assert!(log_posterior(&x, &ys, &fitted).0 >= log_posterior(&x, &ys, &start).0);
    }

    #[test]
    fn posterior_covariance_is_symmetric_psd() {
        let (x, y) = points();
        let gp = GaussianProcess::fit(x, &y, KernelParams::initial(2));
        let q: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64 / 5.0, 0.5]).collect();
        let cov = gp.posterior_covariance(&q);
        assert_eq!(cov, cov.transpose());
        let eig = cov.symmetric_eigenvalues();
        assert!(eig.iter().all(|e| *e >= -1e-9), "{eig}");
    }
}
