use super::gaussian::GaussianProblem;
use super::inner::{ClassificationProblem, RunOptions};
use super::TdcaNetwork;
use crate::error::Result;
use crate::pgpe::{evolve_with, EvolveResult, GenerationRecord, PgpeConfig, PgpeState};

/// What candidate credit networks are scored on.
#[derive(Debug)]
pub enum TaskSpec<'a> {
    /// Fitness is the mean over the problems (one per dataset).
    Classification(Vec<&'a ClassificationProblem>),
    Gaussian(&'a GaussianProblem),
}

impl TaskSpec<'_> {
    /// Fitness of one candidate. Every candidate of a generation shares
    /// `generation_seed`, which seeds the bottom-up initialization (or the
    /// random start points).
    pub fn fitness(&self, candidate: &TdcaNetwork, generation_seed: u64) -> Result<f64> {
        match self {
            TaskSpec::Classification(problems) => {
                let mut total = 0.0;
                for p in problems {
                    total += p.run(candidate, generation_seed, RunOptions::default())?.trace.fitness();
                }
                Ok(total / problems.len() as f64)
            }
            TaskSpec::Gaussian(problem) => problem.fitness(candidate, generation_seed),
        }
    }
}

/// Evolves the weights of `template` with PGPE, starting from its current
/// weights, and returns the network at the final search center.
pub fn evolve_tdca(task: &TaskSpec, template: &TdcaNetwork, pgpe: &PgpeConfig) -> Result<(TdcaNetwork, EvolveResult)> {
    evolve_tdca_with(task, template, pgpe, |_, _| {})
}

pub fn evolve_tdca_with<C>(
    task: &TaskSpec,
    template: &TdcaNetwork,
    pgpe: &PgpeConfig,
    on_generation: C,
) -> Result<(TdcaNetwork, EvolveResult)>
where
    C: FnMut(&PgpeState, &GenerationRecord),
{
    let result = evolve_with(
        |beta, ctx| {
            let candidate = template.with_params(beta)?;
            task.fitness(&candidate, ctx.generation_seed)
        },
        template.params(),
        pgpe,
        on_generation,
    )?;
    let evolved = template.with_params(result.center())?;
    Ok((evolved, result))
}
