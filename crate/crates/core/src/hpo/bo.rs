//! Expected-improvement Bayesian optimization over a [`SearchSpace`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::gp::{fit_hyperparameters, standardize, GaussianProcess, KernelParams};
use super::{HpoError, SearchSpace, TrialConfig, CONTINUOUS_DIMS};

/// Successful observations before the GP drives suggestions; also the refit period.
pub const INITIAL_DESIGN: usize = 5;
pub const CANDIDATES: usize = 256;
pub const LOCAL_STARTS: usize = 8;
pub const EI_XI: f64 = 0.01;
const HYPER_ITERATIONS: usize = 60;
const HALTON_BASES: [u32; 5] = [2, 3, 5, 7, 11];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub config: TrialConfig,
    pub objective: f64,
}

/// Immutable optimizer state; [`observe`] returns an extended copy.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateState {
    space: SearchSpace,
    observations: Vec<Observation>,
    failed: Vec<u64>,
    kernel: KernelParams,
    incumbent: Option<Observation>,
}

impl SurrogateState {
    pub fn new(space: SearchSpace) -> Result<Self, HpoError> {
        space.validate()?;
        Ok(Self {
            space,
            observations: Vec::new(),
            failed: Vec::new(),
            kernel: KernelParams::initial(CONTINUOUS_DIMS),
            incumbent: None,
        })
    }

    pub fn space(&self) -> &SearchSpace {
        &self.space
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn failed_count(&self) -> usize {
        self.failed.len()
    }

    pub fn trial_count(&self) -> usize {
        self.observations.len() + self.failed.len()
    }

    pub fn incumbent(&self) -> Option<&Observation> {
        self.incumbent.as_ref()
    }

    pub fn kernel(&self) -> &KernelParams {
        &self.kernel
    }

    /// GP posterior over encoded configurations, if anything was observed.
    pub fn posterior(&self) -> Option<GaussianProcess> {
        if self.observations.is_empty() {
            return None;
        }
        let (x, y) = self.training_data();
        Some(GaussianProcess::fit(x, &y, self.kernel.clone()))
    }

    fn training_data(&self) -> (Vec<Vec<f64>>, Vec<f64>) {
        self.observations
            .iter()
            .map(|o| (self.space.encode(&o.config), o.objective))
            .unzip()
    }

    fn contains_id(&self, id: u64) -> bool {
        self.failed.contains(&id) || self.observations.iter().any(|o| o.config.trial_id == id)
    }
}

/// Records `objective` for `config`. Non-finite objectives mark the trial failed.
pub fn observe(state: &SurrogateState, config: TrialConfig, objective: f64) -> Result<SurrogateState, HpoError> {
    if state.contains_id(config.trial_id) {
        return Err(HpoError::DuplicateTrialId(config.trial_id));
    }
    let mut next = state.clone();
    if !objective.is_finite() {
        next.failed.push(config.trial_id);
        return Ok(next);
    }
    let obs = Observation { config, objective };
    next.observations.push(obs);
    if next.incumbent.is_none_or(|b| objective < b.objective) {
        next.incumbent = Some(obs);
    }
    let n = next.observations.len();
    if n >= INITIAL_DESIGN && n % INITIAL_DESIGN == 0 {
        let (x, y) = next.training_data();
        next.kernel = fit_hyperparameters(&x, &y, &next.kernel, HYPER_ITERATIONS);
    }
    Ok(next)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn radical_inverse(mut i: u64, base: u32) -> f64 {
    let b = u64::from(base);
    let inv = 1.0 / f64::from(base);
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += (i % b) as f64 * f;
        i /= b;
        f *= inv;
    }
    r
}

/// Randomly shifted (Cranley-Patterson) Halton point in `[0, 1)^5`.
fn halton(index: u64, shift: &[f64; 5]) -> [f64; 5] {
    let mut p = [0.0; 5];
    for (d, base) in HALTON_BASES.iter().enumerate() {
        p[d] = (radical_inverse(index, *base) + shift[d]).fract();
    }
    p
}

fn shift_for(seed: u64) -> [f64; 5] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    std::array::from_fn(|_| rng.random::<f64>())
}

fn pick(u: f64, n: usize) -> usize {
    ((u * n as f64) as usize).min(n - 1)
}

#[derive(Debug, Clone, Copy)]
struct Point {
    u: [f64; CONTINUOUS_DIMS],
    dense: usize,
    opt: usize,
}

fn from_halton(p: [f64; 5], space: &SearchSpace) -> Point {
    Point {
        u: [p[0], p[1], p[2]],
        dense: pick(p[3], space.dense_units.len()),
        opt: pick(p[4], space.optimizers.len()),
    }
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Expected improvement below `best` for a Gaussian with `mean` and `var`.
pub fn expected_improvement(mean: f64, var: f64, best: f64, xi: f64) -> f64 {
    let gain = best - mean - xi;
    let sd = var.sqrt();
    if sd < 1e-12 {
        return gain.max(0.0);
    }
    let z = gain / sd;
    (gain * std_normal_cdf(z) + sd * std_normal_pdf(z)).max(0.0)
}

struct Acquisition<'a> {
    gp: GaussianProcess,
    space: &'a SearchSpace,
    best: f64,
}

impl Acquisition<'_> {
    fn ei(&self, p: &Point) -> f64 {
        let x = self.space.encode_parts(&p.u, p.dense, p.opt);
        let (m, v) = self.gp.predict_standardized(&x);
        expected_improvement(m, v, self.best, EI_XI)
    }

    /// Coordinate pattern search over the continuous dimensions.
    fn refine(&self, start: Point) -> (Point, f64) {
        let mut p = start;
        let mut value = self.ei(&p);
        let mut step = 0.05;
        while step > 1e-4 {
            let mut improved = false;
            for d in 0..CONTINUOUS_DIMS {
                for dir in [1.0, -1.0] {
                    let mut q = p;
                    q.u[d] = (q.u[d] + dir * step).clamp(0.0, 1.0);
                    if q.u[d] == p.u[d] {
                        continue;
                    }
                    let v = self.ei(&q);
                    if v > value {
                        p = q;
                        value = v;
                        improved = true;
                        break;
                    }
                }
            }
            if !improved {
                step *= 0.5;
            }
        }
        (p, value)
    }
}

fn finish(space: &SearchSpace, p: Point, trial_id: u64, seed: u64) -> TrialConfig {
    let mut c = space.from_unit(p.u, p.dense, p.opt);
    c.trial_id = trial_id;
    c.seed = splitmix64(seed ^ trial_id.wrapping_mul(0xA24B_AED4_963E_E407));
    c
}

/// Next configuration to evaluate. Deterministic in `(state, seed)`.
pub fn suggest(state: &SurrogateState, seed: u64) -> TrialConfig {
    let space = &state.space;
    let trial_id = state.trial_count() as u64;
    if state.observations.len() < INITIAL_DESIGN {
        let p = halton(trial_id + 1, &shift_for(seed));
        return finish(space, from_halton(p, space), trial_id, seed);
    }

    let gp = state.posterior().expect("observations present");
    let (_, y) = state.training_data();
    let (ys, _, _) = standardize(&y);
    let best = ys.iter().copied().fold(f64::INFINITY, f64::min);
    let acq = Acquisition { gp, space, best };

    let shift = shift_for(splitmix64(seed).wrapping_add(trial_id));
    let candidates: Vec<Point> = (1..=CANDIDATES as u64)
        .map(|i| from_halton(halton(i, &shift), space))
        .collect();
    let scores: Vec<f64> = candidates.par_iter().map(|p| acq.ei(p)).collect();
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));

    let refined: Vec<(Point, f64)> = order[..LOCAL_STARTS]
        .par_iter()
        .map(|&i| acq.refine(candidates[i]))
        .collect();
    let (mut best_point, mut best_ei) = refined[0];
    for &(p, v) in &refined[1..] {
        if v > best_ei {
            best_point = p;
            best_ei = v;
        }
    }
    for dense in 0..space.dense_units.len() {
        for opt in 0..space.optimizers.len() {
            let q = Point { dense, opt, ..best_point };
            let v = acq.ei(&q);
            if v > best_ei {
                best_point = q;
                best_ei = v;
            }
        }
    }
    finish(space, best_point, trial_id, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn objective(c: &TrialConfig, s: &SearchSpace) -> f64 {
        let u = s.to_unit(c);
        (u[0] - 0.3).powi(2) + (u[1] - 0.6).powi(2) + (u[2] - 0.2).powi(2) + if c.dense_units == 512 { 0.0 } else { 0.1 }
    }

    fn run(seed: u64, n: usize) -> SurrogateState {
        let mut st = SurrogateState::new(SearchSpace::default()).unwrap();
        for _ in 0..n {
            let c = suggest(&st, seed);
            let y = objective(&c, st.space());
            st = observe(&st, c, y).unwrap();
        }
        st
    }

    #[test]
    fn initial_design_is_space_filling() {
        let st = run(3, 5);
        let us: Vec<_> = st.observations().iter().map(|o| st.space().to_unit(&o.config)).collect();
        for i in 0..us.len() {
            for j in 0..i {
                let d: f64 = (0..3).map(|k| (us[i][k] - us[j][k]).powi(2)).sum::<f64>().sqrt();
                assert!(d > 0.1, "{i} {j} {d}");
            }
        }
    }

    #[test]
    fn deterministic_and_incumbent_is_min() {
        let a = run(11, 9);
        let b = run(11, 9);
        assert_eq!(a, b);
        let min = a.observations().iter().map(|o| o.objective).fold(f64::INFINITY, f64::min);
        assert_eq!(a.incumbent().unwrap().objective, min);
        assert_eq!(a.observations().iter().map(|o| o.config.trial_id).collect::<Vec<_>>(), (0..9).collect::<Vec<_>>());
    }

    #[test]
    fn failures_and_duplicates() {
        let st = SurrogateState::new(SearchSpace::default()).unwrap();
        let c = suggest(&st, 1);
        let st = observe(&st, c, f64::NAN).unwrap();
        assert_eq!((st.observations().len(), st.failed_count()), (0, 1));
        assert!(matches!(observe(&st, c, 1.0), Err(HpoError::DuplicateTrialId(0))));
        let c2 = suggest(&st, 1);
        assert_eq!(c2.trial_id, 1);
    }

    #[test]
    fn posterior_interpolates_observations() {
        let st = run(5, 10);
        let gp = st.posterior().unwrap();
        for o in st.observations() {
            let (m, v) = gp.predict(&st.space().encode(&o.config));
            assert!((m - o.objective).abs() <= gp.noise_floor().sqrt() * 3.0 + 1e-9);
            assert!(v <= gp.noise_floor() * (1.0 + 1e-9));
        }
    }

    #[test]
    fn expected_improvement_edges() {
        assert_eq!(expected_improvement(0.0, 0.0, 1.0, 0.0), 1.0);
        assert_eq!(expected_improvement(2.0, 0.0, 1.0, 0.0), 0.0);
        let a = expected_improvement(0.0, 1.0, 0.0, 0.0);
        assert!((a - 1.0 / (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-12);
    }
}
