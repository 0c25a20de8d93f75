//! Inner training loop of a classifier driven by credits.
//!
//! The reference loop runs a full forward pass and builds an explicit
//! update every step. For single-hidden-layer classifiers a second engine
//! avoids touching the first weight matrix: every first-layer update is a
//! combination of the input rows, so its effect on the hidden
//! pre-activations follows from `X X^T` (or `X (X^T M)`) without forming
//! `W1`. Both engines compute the same numbers up to rounding.

use std::sync::{Arc, Mutex};

use ndarray::{Array1, Array2, Axis, Zip};

use super::{activation_slope, build_state, outer, CreditMode, ExpansionRule, HiddenGate, TdcaNetwork, LOSS_TIE_BREAK};
use crate::error::{Result, TdcaError};
use crate::nn::{argmax, init_mlp, per_example_cross_entropy, softmax_row, Activation, Batch, Dense, LayerSpec, Mlp, ParamVector};
use crate::tasks::Dataset;

/// Largest batch for which the `n x n` Gram matrix is precomputed.
pub const GRAM_LIMIT: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub accuracy: f64,
    pub loss: f64,
}

/// Metrics observed before each update, the final metrics after the last
/// update, and optionally every parameter snapshot (initial one included).
#[derive(Debug, Clone, PartialEq)]
pub struct InnerLoopTrace {
    pub steps: Vec<StepRecord>,
    pub final_accuracy: f64,
    pub final_loss: f64,
    pub snapshots: Vec<ParamVector>,
}

impl InnerLoopTrace {
    /// Final accuracy minus a small cross-entropy tie-breaker.
    pub fn fitness(&self) -> f64 {
        self.final_accuracy - LOSS_TIE_BREAK * self.final_loss
    }
}

#[derive(Debug, Clone)]
pub struct InnerOutcome {
    pub mlp: Option<Mlp>,
    pub trace: InnerLoopTrace,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Return the trained network.
    pub materialize: bool,
    /// Keep a snapshot per step (forces the reference engine).
    pub snapshots: bool,
    pub force_reference: bool,
}

/// A training set, a bottom-up architecture and an inner-loop length.
#[derive(Debug)]
pub struct ClassificationProblem {
    specs: Vec<LayerSpec>,
    train: Dataset,
    batch: Batch,
    steps: usize,
    gram: Option<Array2<f64>>,
    x_mean: Array1<f64>,
    u_mean: Array1<f64>,
    u_ones: Array1<f64>,
    init_cache: Mutex<Option<(u64, Arc<Array2<f64>>)>>,
}

impl ClassificationProblem {
    pub fn new(train: Dataset, specs: Vec<LayerSpec>, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(TdcaError::Config("inner loop needs at least one step".into()));
        }
        crate::nn::validate_specs(&specs)?;
        if specs[0].in_dim != train.dim() {
            return Err(TdcaError::Dimension(format!(
                "network expects {} inputs but the data has {}",
                specs[0].in_dim,
                train.dim()
            )));
        }
        if specs.last().expect("validated").activation != Activation::Softmax {
            return Err(TdcaError::Config("classifier must end in softmax".into()));
        }
        let batch = train.batch()?;
        let x = batch.inputs();
        let n = x.nrows() as f64;
        let gram = (x.nrows() <= GRAM_LIMIT && specs.len() == 2).then(|| x.dot(&x.t()) / n);
        let x_mean = x.mean_axis(Axis(0)).expect("non-empty");
        let u_mean = x.dot(&x_mean);
        let u_ones = x.sum_axis(Axis(1));
        Ok(Self {
            specs,
            train,
            batch,
            steps,
            gram,
            x_mean,
            u_mean,
            u_ones,
            init_cache: Mutex::new(None),
        })
    }

    /// `input -> hidden -> 10 softmax` for a dataset.
    pub fn with_hidden(train: Dataset, hidden: &[(usize, Activation)], steps: usize) -> Result<Self> {
        let specs = classifier_specs(train.dim(), hidden, crate::tasks::CLASS_COUNT);
        Self::new(train, specs, steps)
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn train(&self) -> &Dataset {
        &self.train
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn targets(&self) -> &Array2<f64> {
        self.batch.targets()
    }

    fn fast_path_ok(&self, tdca: &TdcaNetwork) -> bool {
        self.specs.len() == 2 && tdca.layout().layers().len() == 2
    }

    pub fn run(&self, tdca: &TdcaNetwork, init_seed: u64, options: RunOptions) -> Result<InnerOutcome> {
        self.check_compatible(tdca)?;
        if options.snapshots || options.force_reference || !self.fast_path_ok(tdca) {
            self.run_reference(tdca, init_seed, options.snapshots)
        } else {
            self.run_fast(tdca, init_seed, options.materialize)
        }
    }

    fn check_compatible(&self, tdca: &TdcaNetwork) -> Result<()> {
        match &tdca.bottom_up {
            super::BottomUp::Classifier(specs) if specs[1..] == self.specs[1..] && specs[0].out_dim == self.specs[0].out_dim => Ok(()),
            _ => Err(TdcaError::Dimension(
                "credit network was built for a different classifier".into(),
            )),
        }
    }

    fn run_reference(&self, tdca: &TdcaNetwork, init_seed: u64, snapshots: bool) -> Result<InnerOutcome> {
        let mut mlp = init_mlp(&self.specs, init_seed)?;
        let targets = self.batch.targets();
        let mut trace = InnerLoopTrace {
            steps: Vec::with_capacity(self.steps),
            final_accuracy: 0.0,
            final_loss: 0.0,
            snapshots: Vec::new(),
        };
        if snapshots {
            trace.snapshots.push(mlp.flatten());
        }
        for t in 0..self.steps {
            let out = mlp.forward(&self.batch)?;
            check_finite(&out, t)?;
            trace.steps.push(self.metrics(&out));
            let state = build_state(&out, targets)?;
            let credits = tdca.generate_credits(&state)?;
            let delta = tdca.credits_to_update(&credits, &mlp, Some(targets))?;
            mlp.apply_update_in_place(&delta, 1.0)?;
            if snapshots {
                trace.snapshots.push(mlp.flatten());
            }
        }
        let out = mlp.evaluate(self.batch.inputs().view())?;
        check_finite(out.output(), self.steps)?;
        let last = self.metrics(out.output());
        trace.final_accuracy = last.accuracy;
        trace.final_loss = last.loss;
        Ok(InnerOutcome {
            mlp: Some(mlp),
            trace,
        })
    }

    fn metrics(&self, probs: &Array2<f64>) -> StepRecord {
        let correct = probs
            .rows()
            .into_iter()
            .zip(&self.train.labels)
            .filter(|(row, &l)| argmax(row.view()) == l)
            .count();
        StepRecord {
            accuracy: correct as f64 / self.train.len() as f64,
            loss: per_example_cross_entropy(probs, self.batch.targets())
                .mean()
                .expect("non-empty"),
        }
    }

    /// Hidden pre-activations of the freshly initialized network, shared by
    /// every candidate using the same seed.
    fn initial_preactivation(&self, seed: u64, init: &Mlp) -> Arc<Array2<f64>> {
        let mut cache = self.init_cache.lock().expect("cache lock");
        if let Some((s, z)) = cache.as_ref() {
            if *s == seed {
                return Arc::clone(z);
            }
        }
        let first = &init.layers()[0];
        let mut z = self.batch.inputs().dot(&first.weights.t());
        z += &first.bias;
        let z = Arc::new(z);
        *cache = Some((seed, Arc::clone(&z)));
        z
    }

    /// `(X X^T / n) M`.
    fn gram_times(&self, m: &Array2<f64>) -> Array2<f64> {
        match &self.gram {
            Some(g) => g.dot(m),
            None => {
                let x = self.batch.inputs();
                x.dot(&x.t().dot(m)) / x.nrows() as f64
            }
        }
    }

    fn run_fast(&self, tdca: &TdcaNetwork, init_seed: u64, materialize: bool) -> Result<InnerOutcome> {
        let init = init_mlp(&self.specs, init_seed)?;
        let act = self.specs[0].activation;
        let hidden = self.specs[0].out_dim;
        let n = self.train.len();
        let nf = n as f64;
        let y = self.batch.targets();
        let layers = tdca.layout().layers();
        let settings = &tdca.settings;

        let mut z1 = (*self.initial_preactivation(init_seed, &init)).clone();
        let mut w2 = init.layers()[1].weights.clone();
        let mut b2 = init.layers()[1].bias.clone();
        let mut b1 = init.layers()[0].bias.clone();
        let mut hidden_credit_sum = Array1::<f64>::zeros(hidden);
        let mut c1_acc = if materialize && settings.mode == CreditMode::ErrorGated {
            Some(Array2::<f64>::zeros((n, hidden)))
        } else {
            None
        };
        let mut steps = Vec::with_capacity(self.steps);

        let forward = |z1: &Array2<f64>, w2: &Array2<f64>, b2: &Array1<f64>| {
            let mut h = z1.clone();
            Activation::apply(act, &mut h);
            let mut p = h.dot(&w2.t());
            p += b2;
            for mut row in p.rows_mut() {
                softmax_row(&mut row);
            }
            (h, p)
        };

        for t in 0..self.steps {
            let (h, p) = forward(&z1, &w2, &b2);
            check_finite(&p, t)?;
            steps.push(self.metrics(&p));
            let state = build_state(&p, y)?;
            let credits = tdca.generate_credits(&state)?;
            match settings.mode {
                CreditMode::Aggregate => {
                    let u0 = layers[0].units;
                    let ch = layers[0].expand(&credits.values[..u0]);
                    let co = layers[1].expand(&credits.values[u0..]);
                    let (u, pre_out) = match settings.rule {
                        ExpansionRule::PresynapticMean => (&self.u_mean, h.mean_axis(Axis(0)).expect("non-empty")),
                        ExpansionRule::Broadcast => (&self.u_ones, Array1::ones(hidden)),
                    };
                    Zip::from(z1.rows_mut()).and(u).for_each(|mut row, &ur| {
                        row.zip_mut_with(&ch, |z, &c| *z += c * (ur + 1.0));
                    });
                    hidden_credit_sum += &ch;
                    b1 += &ch;
                    w2 += &outer(&co, &pre_out);
                    b2 += &co;
                }
                CreditMode::ErrorGated => {
                    let blocks = tdca.gating_blocks(&credits);
                    let k = layers[0].expand_rows(&blocks[0]);
                    let ko = layers[1].expand_rows(&blocks[1]);
                    let e = y - &p;
                    let mut c1 = e.dot(&k.t());
                    let dz = if settings.gate == HiddenGate::Derivative {
                        Zip::from(&mut c1).and(&h).for_each(|c, &a| *c *= activation_slope(act, a));
                        self.gram_times(&c1)
                    } else {
                        self.gram_times(&e).dot(&k.t())
                    };
                    let mean1 = c1.mean_axis(Axis(0)).expect("non-empty");
                    z1 += &dz;
                    z1 += &mean1;
                    b1 += &mean1;
                    if let Some(acc) = c1_acc.as_mut() {
                        *acc += &c1;
                    }
                    let c2 = e.dot(&ko.t());
                    w2 += &(c2.t().dot(&h) / nf);
                    b2 += &c2.mean_axis(Axis(0)).expect("non-empty");
                }
            }
        }
        let (_, p) = forward(&z1, &w2, &b2);
        check_finite(&p, self.steps)?;
        let last = self.metrics(&p);
        let trace = InnerLoopTrace {
            steps,
            final_accuracy: last.accuracy,
            final_loss: last.loss,
            snapshots: Vec::new(),
        };
        let mlp = if materialize {
            let mut w1 = init.layers()[0].weights.clone();
            match (&c1_acc, settings.rule) {
                (Some(acc), _) => w1 += &(acc.t().dot(self.batch.inputs()) / nf),
                (None, ExpansionRule::PresynapticMean) => w1 += &outer(&hidden_credit_sum, &self.x_mean),
                (None, ExpansionRule::Broadcast) => {
                    w1 += &outer(&hidden_credit_sum, &Array1::ones(self.specs[0].in_dim))
                }
            }
            Some(Mlp::from_layers(
                self.specs.clone(),
                vec![Dense { weights: w1, bias: b1 }, Dense { weights: w2, bias: b2 }],
            )?)
        } else {
            None
        };
        Ok(InnerOutcome { mlp, trace })
    }
}

fn check_finite(out: &Array2<f64>, step: usize) -> Result<()> {
    if out.iter().any(|v| !v.is_finite()) {
        return Err(TdcaError::NonFinite(format!("bottom-up activations at inner step {step}")));
    }
    Ok(())
}

pub fn classifier_specs(input: usize, hidden: &[(usize, Activation)], classes: usize) -> Vec<LayerSpec> {
    let mut specs = Vec::with_capacity(hidden.len() + 1);
    let mut prev = input;
    for &(width, act) in hidden {
        specs.push(LayerSpec::new(prev, width, act));
        prev = width;
    }
    specs.push(LayerSpec::new(prev, classes, Activation::Softmax));
    specs
}

/// Trains a fresh network from `init_seed` with credits from `tdca`.
pub fn inner_loop(tdca: &TdcaNetwork, init_seed: u64, problem: &ClassificationProblem) -> Result<(Mlp, InnerLoopTrace)> {
    let out = problem.run(
        tdca,
        init_seed,
        RunOptions {
            materialize: true,
            ..RunOptions::default()
        },
    )?;
    Ok((out.mlp.expect("materialized"), out.trace))
}

/// Classification fitness of a candidate weight vector.
pub fn fitness_of(tdca: &TdcaNetwork, beta: &[f64], problem: &ClassificationProblem, init_seed: u64) -> Result<f64> {
    if beta.len() != tdca.param_count() {
        return Err(TdcaError::Dimension(format!(
            "candidate has {} values but the credit net has {}",
            beta.len(),
            tdca.param_count()
        )));
    }
    let candidate = tdca.with_params(beta)?;
    Ok(problem.run(&candidate, init_seed, RunOptions::default())?.trace.fitness())
}
