//! Diagonal-covariance Gaussian mixtures fitted by expectation–maximization.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SegvalError;

pub const VARIANCE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GmmConfig {
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    /// Stop once the mean log-likelihood improves by less than this.
    pub tol: f64,
}

impl Default for GmmConfig {
    fn default() -> Self {
        Self {
            k: 2,
            seed: 7,
            max_iter: 200,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    pub k: usize,
    pub dim: usize,
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
    /// Mean per-sample log-likelihood before each M-step.
    pub log_likelihood_trace: Vec<f64>,
    pub converged: bool,
}

/// Row-major samples of fixed dimension.
#[derive(Debug, Clone, Copy)]
pub struct Samples<'a> {
    data: &'a [f64],
    dim: usize,
}

impl<'a> Samples<'a> {
    pub fn new(data: &'a [f64], dim: usize) -> Result<Self, SegvalError> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(SegvalError::InvalidInput(format!(
                "{} values do not form rows of dimension {dim}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(SegvalError::InvalidInput("non-finite sample value".into()));
        }
        Ok(Self { data, dim })
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &'a [f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn kmeans_pp(samples: Samples<'_>, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = samples.len();
    let mut centers = vec![samples.row(rng.random_range(0..n)).to_vec()];
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(samples.row(i), &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            rng.random_range(0..n)
        } else {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, w) in d2.iter().enumerate() {
                if target < *w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        };
        let c = samples.row(next).to_vec();
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(samples.row(i), &c));
        }
        centers.push(c);
    }
    centers
}

impl GmmModel {
    fn log_component(&self, j: usize, x: &[f64]) -> f64 {
        let mut lp = self.weights[j].ln();
        for ((xi, m), v) in x.iter().zip(&self.means[j]).zip(&self.variances[j]) {
            lp -= 0.5 * ((2.0 * PI * v).ln() + (xi - m) * (xi - m) / v);
        }
        lp
    }

    /// Log of the joint density of `x` with each component, and their log-sum-exp.
    fn log_joint(&self, x: &[f64], out: &mut [f64]) -> f64 {
        let mut max = f64::NEG_INFINITY;
        for (j, o) in out.iter_mut().enumerate() {
            *o = self.log_component(j, x);
            max = max.max(*o);
        }
        if max == f64::NEG_INFINITY {
            return max;
        }
        max + out.iter().map(|o| (o - max).exp()).sum::<f64>().ln()
    }

    /// Index of the maximum-posterior component for `x`.
    pub fn assign(&self, x: &[f64]) -> usize {
        let mut best = (0, f64::NEG_INFINITY);
        for j in 0..self.k {
            let lp = self.log_component(j, x);
            if lp > best.1 {
                best = (j, lp);
            }
        }
        best.0
    }

    pub fn posterior(&self, x: &[f64]) -> Vec<f64> {
        let mut lj = vec![0.0; self.k];
        let lse = self.log_joint(x, &mut lj);
        lj.iter().map(|l| (l - lse).exp()).collect()
    }

    pub fn mean_log_likelihood(&self, samples: Samples<'_>) -> f64 {
        let mut buf = vec![0.0; self.k];
        let total: f64 = (0..samples.len())
            .map(|i| self.log_joint(samples.row(i), &mut buf))
            .sum();
        total / samples.len() as f64
    }
}

/// Fit a `cfg.k`-component mixture with k-means++ seeding.
///
/// Reaching `max_iter` is reported through `converged == false`, not an error.
pub fn fit_gmm(samples: Samples<'_>, cfg: &GmmConfig) -> Result<GmmModel, SegvalError> {
    let (n, dim, k) = (samples.len(), samples.dim, cfg.k);
    if k < 2 {
        return Err(SegvalError::InvalidInput(format!("k must be at least 2, got {k}")));
    }
    if n < 10 * k {
        return Err(SegvalError::InvalidInput(format!(
            "{n} samples is fewer than 10 per component (k = {k})"
        )));
    }
    let first = samples.row(0);
    if (1..n).all(|i| samples.row(i) == first) {
        return Err(SegvalError::DegenerateInput);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let centers = kmeans_pp(samples, k, &mut rng);

    // Hard assignment to the seeds gives the starting parameters.
    let mut resp = vec![0.0; n * k];
    for i in 0..n {
        let x = samples.row(i);
        let j = (0..k)
            .min_by(|&a, &b| sq_dist(x, &centers[a]).total_cmp(&sq_dist(x, &centers[b])))
            .expect("k >= 2");
        resp[i * k + j] = 1.0;
    }
    let mut model = GmmModel {
        k,
        dim,
        weights: vec![1.0 / k as f64; k],
        means: centers,
        variances: vec![vec![1.0; dim]; k],
        log_likelihood_trace: Vec::new(),
        converged: false,
    };
    m_step(&mut model, samples, &resp);

    let mut buf = vec![0.0; k];
    for _ in 0..cfg.max_iter {
        let mut ll = 0.0;
        for i in 0..n {
            let lse = model.log_joint(samples.row(i), &mut buf);
            ll += lse;
            for j in 0..k {
                resp[i * k + j] = (buf[j] - lse).exp();
            }
        }
        let ll = ll / n as f64;
        let previous = model.log_likelihood_trace.last().copied();
        model.log_likelihood_trace.push(ll);
        if previous.is_some_and(|p| ll - p < cfg.tol) {
            model.converged = true;
            break;
        }
        m_step(&mut model, samples, &resp);
    }
    Ok(model)
}

fn m_step(model: &mut GmmModel, samples: Samples<'_>, resp: &[f64]) {
    let (n, dim, k) = (samples.len(), model.dim, model.k);
    for j in 0..k {
        let nk: f64 = (0..n).map(|i| resp[i * k + j]).sum();
        if nk <= f64::MIN_POSITIVE {
            // An emptied component keeps its location with a tiny weight.
            model.weights[j] = f64::MIN_POSITIVE;
            continue;
        }
        let mut mean = vec![0.0; dim];
        for i in 0..n {
            let r = resp[i * k + j];
            for (m, x) in mean.iter_mut().zip(samples.row(i)) {
                *m += r * x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= nk);
        let mut var = vec![0.0; dim];
        for i in 0..n {
            let r = resp[i * k + j];
            for ((v, x), m) in var.iter_mut().zip(samples.row(i)).zip(&mean) {
                *v += r * (x - m) * (x - m);
            }
        }
        var.iter_mut().for_each(|v| *v = (*v / nk).max(VARIANCE_FLOOR));
        model.weights[j] = nk / n as f64;
        model.means[j] = mean;
        model.variances[j] = var;
    }
    let total: f64 = model.weights.iter().sum();
    model.weights.iter_mut().for_each(|w| *w /= total);
}
