//! Policy gradients with parameter-based exploration, mirrored sampling.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TdcaError};

pub const SIGMA_MIN: f64 = 1e-4;
pub const SIGMA_MAX: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PgpeConfig {
    pub population_size: usize,
    pub lr_center: f64,
    pub lr_sigma: f64,
    pub sigma_init: f64,
    pub generations: usize,
    pub seed: u64,
    /// z-score the raw fitness before estimating gradients.
    pub shaping: bool,
    /// Decay of the running fitness baseline used by the sigma estimator.
    pub baseline_decay: f64,
}

impl Default for PgpeConfig {
    fn default() -> Self {
        Self {
            population_size: 64,
            lr_center: 0.2,
            lr_sigma: 0.1,
            sigma_init: 0.1,
            generations: 100,
            seed: 0,
            shaping: true,
            baseline_decay: 0.9,
        }
    }
}

impl PgpeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population_size == 0 || self.population_size % 2 != 0 {
            return Err(TdcaError::Config(format!(
                "population size must be even and positive, got {}",
                self.population_size
            )));
        }
        if !(self.lr_center > 0.0) || !(self.lr_sigma >= 0.0) {
            return Err(TdcaError::Config(
                "lr_center must be positive and lr_sigma non-negative".into(),
            ));
        }
        if !(self.sigma_init > 0.0) || !self.sigma_init.is_finite() {
            return Err(TdcaError::Config("sigma_init must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.baseline_decay) {
            return Err(TdcaError::Config("baseline_decay must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PgpeState {
    pub center: Vec<f64>,
    pub sigma: Vec<f64>,
    pub lr_center: f64,
    pub lr_sigma: f64,
    pub population_size: usize,
    pub generation: usize,
    /// Running mean of the fitness signal fed to the estimator.
    pub baseline: Option<f64>,
}

impl PgpeState {
    pub fn new(center: Vec<f64>, config: &PgpeConfig) -> Result<Self> {
        config.validate()?;
        let sigma = vec![config.sigma_init; center.len()];
        let state = Self {
            center,
            sigma,
            lr_center: config.lr_center,
            lr_sigma: config.lr_sigma,
            population_size: config.population_size,
            generation: 0,
            baseline: None,
        };
        state.validate()?;
        Ok(state)
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn sigma_mean(&self) -> f64 {
        if self.sigma.is_empty() {
            return 0.0;
        }
        self.sigma.iter().sum::<f64>() / self.sigma.len() as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.sigma.len() != self.center.len() {
            return Err(TdcaError::Dimension("sigma and center lengths differ".into()));
        }
        if self.sigma.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(TdcaError::Config("sigma must be positive element-wise".into()));
        }
        if self.population_size == 0 || self.population_size % 2 != 0 {
            return Err(TdcaError::Config("population size must be even".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplePair {
    pub epsilon: Vec<f64>,
    pub plus: Vec<f64>,
    pub minus: Vec<f64>,
    pub fitness_plus: f64,
    pub fitness_minus: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitnessReport {
    pub raw: Vec<f64>,
    pub shaped: Vec<f64>,
    pub best_fitness: f64,
    pub mean_fitness: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenerationRecord {
    pub generation: usize,
    pub best_fitness: f64,
    pub mean_fitness: f64,
    pub sigma_mean: f64,
}

/// What an objective learns about the candidate it is scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalContext {
    pub generation: usize,
    pub candidate: usize,
    /// Unique per (generation, candidate).
    pub seed: u64,
    /// Shared by every candidate of the generation.
    pub generation_seed: u64,
}

#[derive(Debug, Clone)]
pub struct EvolveResult {
    pub state: PgpeState,
    pub history: Vec<GenerationRecord>,
}

impl EvolveResult {
    pub fn center(&self) -> &[f64] {
        &self.state.center
    }
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(generation: usize, candidate: usize, master: u64) -> u64 {
    mix64(mix64(mix64(master) ^ generation as u64) ^ candidate as u64)
}

/// Draws `N/2` mirrored pairs around the center.
pub fn sample_population(state: &PgpeState, rng_seed: u64) -> Result<Vec<SamplePair>> {
    state.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let pairs = (0..state.population_size / 2)
        .map(|_| {
            let epsilon: Vec<f64> = (0..state.dim())
                .map(|_| StandardNormal.sample(&mut rng))
                .collect();
            let mut plus = Vec::with_capacity(state.dim());
            let mut minus = Vec::with_capacity(state.dim());
            for ((&c, &s), &e) in state.center.iter().zip(&state.sigma).zip(&epsilon) {
                let d = s * e;
                plus.push(c + d);
                minus.push(c - d);
            }
            SamplePair {
                epsilon,
                plus,
                minus,
                fitness_plus: 0.0,
                fitness_minus: 0.0,
            }
        })
        .collect();
    Ok(pairs)
}

/// z-score normalization with the population standard deviation.
pub fn shape_fitness(raw: &[f64]) -> Result<Vec<f64>> {
    if raw.is_empty() {
        return Err(TdcaError::Degenerate("cannot shape an empty fitness list".into()));
    }
    let n = raw.len() as f64;
    let mean = raw.iter().sum::<f64>() / n;
    let var = raw.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if !(std > 1e-300) || raw.iter().all(|&v| v == raw[0]) {
        return Ok(vec![0.0; raw.len()]);
    }
    Ok(raw.iter().map(|v| (v - mean) / std).collect())
}

/// Mirrored estimator. Pairs must already carry the (possibly shaped)
/// fitness values the gradient should follow.
pub fn estimate_gradient(
    pairs: &[SamplePair],
    sigma: &[f64],
    baseline: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if pairs.is_empty() {
        return Err(TdcaError::Degenerate("gradient needs at least one pair".into()));
    }
    let dim = sigma.len();
    let mut grad_center = vec![0.0; dim];
    let mut grad_sigma = vec![0.0; dim];
    for pair in pairs {
        if !pair.fitness_plus.is_finite() || !pair.fitness_minus.is_finite() {
            return Err(TdcaError::NonFinite("candidate fitness".into()));
        }
        if pair.epsilon.len() != dim {
            return Err(TdcaError::Dimension("epsilon length differs from sigma".into()));
        }
        let half_diff = (pair.fitness_plus - pair.fitness_minus) / 2.0;
        let centered = (pair.fitness_plus + pair.fitness_minus) / 2.0 - baseline;
        for j in 0..dim {
            let e = pair.epsilon[j];
            grad_center[j] += e * half_diff;
            grad_sigma[j] += (e * e - 1.0) * centered;
        }
    }
    let n = pairs.len() as f64;
    for j in 0..dim {
        grad_center[j] /= n * sigma[j];
        grad_sigma[j] /= n * sigma[j];
    }
    Ok((grad_center, grad_sigma))
}

/// Unmirrored estimator `(1/σ) E[ε F]`, used to validate the mirrored one.
pub fn estimate_gradient_plain(
    epsilons: &[Vec<f64>],
    fitness: &[f64],
    sigma: &[f64],
) -> Result<Vec<f64>> {
    if epsilons.is_empty() || epsilons.len() != fitness.len() {
        return Err(TdcaError::Dimension("one fitness value per epsilon required".into()));
    }
    let mut grad = vec![0.0; sigma.len()];
    for (eps, &f) in epsilons.iter().zip(fitness) {
        if !f.is_finite() {
            return Err(TdcaError::NonFinite("candidate fitness".into()));
        }
        for (g, &e) in grad.iter_mut().zip(eps) {
            *g += e * f;
        }
    }
    let n = epsilons.len() as f64;
    Ok(grad.iter().zip(sigma).map(|(g, s)| g / (n * s)).collect())
}

/// Gradient-ascent step with the sigma clamp.
pub fn step(state: &PgpeState, grad_center: &[f64], grad_sigma: &[f64]) -> Result<PgpeState> {
    if grad_center.len() != state.dim() || grad_sigma.len() != state.dim() {
        return Err(TdcaError::Dimension("gradient length differs from the center".into()));
    }
    let mut next = state.clone();
    for j in 0..state.dim() {
        next.center[j] += state.lr_center * grad_center[j];
        next.sigma[j] = (state.sigma[j] + state.lr_sigma * grad_sigma[j]).clamp(SIGMA_MIN, SIGMA_MAX);
    }
    next.generation += 1;
    Ok(next)
}

/// Runs the full sample, evaluate, shape, estimate, step cycle.
///
/// `objective` must be deterministic given the candidate and its
/// [`EvalContext`]. Candidates of a generation are scored in parallel on the
/// current rayon pool.
pub fn evolve<F>(objective: F, initial_center: Vec<f64>, config: &PgpeConfig) -> Result<EvolveResult>
where
    F: Fn(&[f64], EvalContext) -> Result<f64> + Sync,
{
    evolve_with(objective, initial_center, config, |_, _| {})
}

/// [`evolve`] with a callback after every generation.
pub fn evolve_with<F, C>(
    objective: F,
    initial_center: Vec<f64>,
    config: &PgpeConfig,
    mut on_generation: C,
) -> Result<EvolveResult>
where
    F: Fn(&[f64], EvalContext) -> Result<f64> + Sync,
    C: FnMut(&PgpeState, &GenerationRecord),
{
    let mut state = PgpeState::new(initial_center, config)?;
    let mut history = Vec::with_capacity(config.generations);
    for generation in 0..config.generations {
        let sample_seed = derive_seed(generation, usize::MAX - 1, config.seed);
        let generation_seed = derive_seed(generation, usize::MAX, config.seed);
        let mut pairs = sample_population(&state, sample_seed)?;

        let candidates: Vec<(usize, &[f64])> = pairs
            .iter()
            .enumerate()
            .flat_map(|(p, pair)| [(2 * p, pair.plus.as_slice()), (2 * p + 1, pair.minus.as_slice())])
            .collect();
        let raw: Vec<f64> = candidates
            .par_iter()
            .map(|&(candidate, params)| {
                let ctx = EvalContext {
                    generation,
                    candidate,
                    seed: derive_seed(generation, candidate, config.seed),
                    generation_seed,
                };
                let f = objective(params, ctx)?;
                if !f.is_finite() {
                    return Err(TdcaError::NonFinite(format!(
                        "objective returned {f} for candidate {candidate} in generation {generation}"
                    )));
                }
                Ok(f)
            })
            .collect::<Result<_>>()?;

        let report = fitness_report(&raw, config.shaping)?;
        for (p, pair) in pairs.iter_mut().enumerate() {
            pair.fitness_plus = report.shaped[2 * p];
            pair.fitness_minus = report.shaped[2 * p + 1];
        }
        let signal_mean = report.shaped.iter().sum::<f64>() / report.shaped.len() as f64;
        let baseline = match state.baseline {
            None => signal_mean,
            Some(b) => config.baseline_decay * b + (1.0 - config.baseline_decay) * signal_mean,
        };
        let (gc, gs) = estimate_gradient(&pairs, &state.sigma, baseline)?;
        state = step(&state, &gc, &gs)?;
        state.baseline = Some(baseline);

        let record = GenerationRecord {
            generation,
            best_fitness: report.best_fitness,
            mean_fitness: report.mean_fitness,
            sigma_mean: state.sigma_mean(),
        };
        on_generation(&state, &record);
        history.push(record);
    }
    Ok(EvolveResult { state, history })
}

/// Summary of one generation's raw scores. Without shaping the "shaped"
/// values are the raw ones.
pub fn fitness_report(raw: &[f64], shaping: bool) -> Result<FitnessReport> {
    let shaped = if shaping {
        shape_fitness(raw)?
    } else {
        if raw.is_empty() {
            return Err(TdcaError::Degenerate("empty fitness list".into()));
        }
        raw.to_vec()
    };
    let best_fitness = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean_fitness = raw.iter().sum::<f64>() / raw.len() as f64;
    Ok(FitnessReport {
        raw: raw.to_vec(),
        shaped,
        best_fitness,
        mean_fitness,
    })
}

pub fn write_history_csv(path: &Path, history: &[GenerationRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| TdcaError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let write = |w: &mut BufWriter<File>| -> std::io::Result<()> {
        writeln!(w, "generation,best_fitness,mean_fitness,sigma_mean")?;
        for r in history {
            writeln!(
                w,
                "{},{:.10},{:.10},{:.10}",
                r.generation, r.best_fitness, r.mean_fitness, r.sigma_mean
            )?;
        }
        w.flush()
    };
    write(&mut w).map_err(|e| TdcaError::io(path, e))
}
