//! Full-batch gradient-descent baseline.

use crate::error::{Result, TdcaError};
use crate::nn::{init_mlp, LayerSpec, Mlp};
use crate::tasks::{Dataset, MixedGaussian};
use crate::tdca::{InnerLoopTrace, StepRecord};

/// Trains a fresh network from `seed` with `steps` plain gradient-descent
/// steps on the mean cross-entropy of the whole training set.
pub fn train_bp(
    specs: &[LayerSpec],
    train: &Dataset,
    seed: u64,
    steps: usize,
    lr: f64,
    snapshots: bool,
) -> Result<(Mlp, InnerLoopTrace)> {
    if steps == 0 {
        return Err(TdcaError::Config("training needs at least one step".into()));
    }
    let batch = train.batch()?;
    let mut mlp = init_mlp(specs, seed)?;
    let mut trace = InnerLoopTrace {
        steps: Vec::with_capacity(steps),
        final_accuracy: 0.0,
        final_loss: 0.0,
        snapshots: Vec::new(),
    };
    if snapshots {
        trace.snapshots.push(mlp.flatten());
    }
    let record = |mlp: &Mlp| -> Result<(StepRecord, crate::nn::ForwardCache)> {
        let cache = mlp.evaluate(batch.inputs().view())?;
        let out = cache.output();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(TdcaError::NonFinite("backprop activations".into()));
        }
        let predictions: Vec<usize> = out.rows().into_iter().map(crate::nn::argmax).collect();
        let accuracy = crate::nn::count_correct(&predictions, &train.labels) as f64 / train.len() as f64;
        let loss = crate::nn::cross_entropy(out, batch.targets())?;
        Ok((StepRecord { accuracy, loss }, cache))
    };
    for _ in 0..steps {
        let (rec, cache) = record(&mlp)?;
        trace.steps.push(rec);
        let grads = mlp.backprop_from_cache(&cache, batch.targets())?;
        mlp.apply_update_in_place(&grads, -lr)?;
        if snapshots {
            trace.snapshots.push(mlp.flatten());
        }
    }
    let (last, _) = record(&mlp)?;
    trace.final_accuracy = last.accuracy;
    trace.final_loss = last.loss;
    Ok((mlp, trace))
}

/// Gradient descent on the mixed Gaussian: `steps + 1` points.
pub fn gaussian_bp(f: &MixedGaussian, start: [f64; 2], lr: f64, steps: usize) -> Vec<[f64; 2]> {
    f.descend(start, lr, steps)
}
