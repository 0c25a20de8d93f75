//! Credit-driven descent on the 2-D mixed Gaussian. The bottom-up "network"
//! is the point itself and the credits are added to its coordinates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{point_state, BottomUp, TdcaNetwork};
use crate::error::{Result, TdcaError};
use crate::tasks::MixedGaussian;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianProblem {
    pub function: MixedGaussian,
    pub steps: usize,
    /// Starts scored in every generation.
    pub fixed_starts: Vec<[f64; 2]>,
    /// Extra starts drawn uniformly from the domain, reseeded per generation.
    pub random_starts: usize,
    pub domain: [f64; 2],
}

impl GaussianProblem {
    pub fn new(function: MixedGaussian, steps: usize, fixed_starts: Vec<[f64; 2]>, random_starts: usize, domain: [f64; 2]) -> Result<Self> {
        if steps == 0 {
            return Err(TdcaError::Config("inner loop needs at least one step".into()));
        }
        if fixed_starts.is_empty() && random_starts == 0 {
            return Err(TdcaError::Config("at least one start point is required".into()));
        }
        if !(domain[0] < domain[1]) {
            return Err(TdcaError::Config("domain must be an increasing interval".into()));
        }
        Ok(Self {
            function,
            steps,
            fixed_starts,
            random_starts,
            domain,
        })
    }

    fn check(tdca: &TdcaNetwork) -> Result<()> {
        match tdca.bottom_up {
            BottomUp::Point(2) => Ok(()),
            _ => Err(TdcaError::Dimension("credit network does not drive a 2-D point".into())),
        }
    }

    /// Displacement the credit network proposes at `p`.
    pub fn credits_at(&self, tdca: &TdcaNetwork, p: [f64; 2]) -> Result<[f64; 2]> {
        let c = tdca.generate_credits(&point_state(&p, self.function.value(p)))?;
        Ok([c.values[0], c.values[1]])
    }

    /// `steps + 1` points starting at `start`.
    pub fn trajectory(&self, tdca: &TdcaNetwork, start: [f64; 2]) -> Result<Vec<[f64; 2]>> {
        Self::check(tdca)?;
        let mut path = Vec::with_capacity(self.steps + 1);
        let mut p = start;
        path.push(p);
        for _ in 0..self.steps {
            let d = self.credits_at(tdca, p)?;
            p = [p[0] + d[0], p[1] + d[1]];
            path.push(p);
        }
        Ok(path)
    }

    pub fn starts(&self, seed: u64) -> Vec<[f64; 2]> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut starts = self.fixed_starts.clone();
        for _ in 0..self.random_starts {
            starts.push([
                rng.gen_range(self.domain[0]..=self.domain[1]),
                rng.gen_range(self.domain[0]..=self.domain[1]),
            ]);
        }
        starts
    }

    /// `-f` at the end of a single trajectory.
    pub fn fitness_from(&self, tdca: &TdcaNetwork, start: [f64; 2]) -> Result<f64> {
        let end = *self.trajectory(tdca, start)?.last().expect("non-empty");
        Ok(-self.function.value(end))
    }

    /// Mean of `-f(final point)` over the generation's starts.
    pub fn fitness(&self, tdca: &TdcaNetwork, seed: u64) -> Result<f64> {
        let starts = self.starts(seed);
        let mut total = 0.0;
        for s in &starts {
            total += self.fitness_from(tdca, *s)?;
        }
        Ok(total / starts.len() as f64)
    }
}
