//! Synthetic objectives and a random-search baseline for optimizer benchmarks.

use hydrocurate_core::hpo::{observe, suggest, SearchSpace, SurrogateState, TrialConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Smooth objective over the full mixed space with a unique minimum of 0.05.
pub fn smooth_objective(space: &SearchSpace, c: &TrialConfig) -> f64 {
    let u = space.to_unit(c);
    let cat = if c.dense_units == 1024 { 0.0 } else { 0.15 } + if c.optimizer == space.optimizers[0] { 0.0 } else { 0.25 };
    0.05 + (u[0] - 0.3).powi(2) + 2.0 * (u[1] - 0.7).powi(2) + 1.5 * (u[2] - 0.25).powi(2) + 0.1 * (1.0 - (6.0 * (u[2] - 0.25)).cos()) + cat
}

pub const TOY_OPTIMUM: f64 = 0.1;
pub const TOY_CENTER: f64 = 0.62;
const TOY_CURVATURE: f64 = 25_000.0;

/// Depends only on the learning rate; minimum `TOY_OPTIMUM` at unit coordinate `TOY_CENTER`.
pub fn lr_toy(space: &SearchSpace, c: &TrialConfig) -> f64 {
    let u = space.to_unit(c)[2];
    TOY_OPTIMUM + TOY_CURVATURE * (u - TOY_CENTER).powi(2) + 0.5 * (1.0 - (20.0 * (u - TOY_CENTER)).cos())
}

/// Uniform sample, log dimensions uniform in log space.
pub fn random_config(space: &SearchSpace, rng: &mut ChaCha8Rng, trial_id: u64) -> TrialConfig {
    let u = [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()];
    let d = rng.random_range(0..space.dense_units.len());
    let o = rng.random_range(0..space.optimizers.len());
    let mut c = space.from_unit(u, d, o);
    c.trial_id = trial_id;
    c
}

pub fn random_search(space: &SearchSpace, f: impl Fn(&SearchSpace, &TrialConfig) -> f64, budget: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..budget).map(|i| f(space, &random_config(space, &mut rng, i as u64))).collect()
}

pub fn bayes_search(space: &SearchSpace, f: impl Fn(&SearchSpace, &TrialConfig) -> f64, budget: usize, seed: u64) -> Vec<f64> {
    let mut st = SurrogateState::new(space.clone()).unwrap();
    let mut out = Vec::with_capacity(budget);
    for _ in 0..budget {
        let c = suggest(&st, seed);
        let y = f(space, &c);
        out.push(y);
        st = observe(&st, c, y).unwrap();
    }
    out
}

/// 1-based index of the first value at or below `target`, if any.
pub fn first_hit(values: &[f64], target: f64) -> Option<usize> {
    values.iter().position(|v| *v <= target).map(|i| i + 1)
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
