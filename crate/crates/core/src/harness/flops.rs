//! Analytic floating-point operation counts per inner-loop step.
//!
//! A multiply-add counts as two operations. Activation functions, softmax
//! and argmax are not counted.

use crate::error::Result;
use crate::nn::LayerSpec;
use crate::tdca::{BottomUp, CreditLayout, CreditMode, Expansion, Granularity, TdcaNetwork, TdcaSettings};

#[derive(Debug, Clone, PartialEq)]
pub enum FlopMethod {
    Bp,
    Tdca(TdcaSettings),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlopRow {
    pub network: String,
    pub method: String,
    pub params: usize,
    /// Bottom-up forward pass over the batch.
    pub forward: f64,
    /// Backward pass (BP) or state, credit net and credit expansion (TDCA).
    pub credit: f64,
    /// Applying the update to the parameters.
    pub update: f64,
    /// Part of `credit` that does not scale with the batch.
    pub credit_fixed: f64,
}

impl FlopRow {
    pub fn total(&self) -> f64 {
        self.forward + self.credit + self.update
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlopReport {
    pub batch_size: usize,
    pub rows: Vec<FlopRow>,
}

const MEGA: f64 = 1e6;

fn forward_flops(specs: &[LayerSpec], batch: f64) -> f64 {
    specs
        .iter()
        .map(|s| batch * (2.0 * s.in_dim as f64 * s.out_dim as f64 + s.out_dim as f64))
        .sum()
}

pub fn method_name(method: &FlopMethod) -> String {
    match method {
        FlopMethod::Bp => "bp".into(),
        FlopMethod::Tdca(s) => {
            let g = match &s.granularity {
                Granularity::PerParameter => "parameter".to_string(),
                Granularity::PerNeuron => "neuron".to_string(),
                Granularity::PerGroup(g) => format!("group{}", g.credits),
            };
            format!("tdca-{}-{g}", s.mode)
        }
    }
}

/// Counts for one method on one bottom-up architecture, in MFLOPs.
pub fn count_flops(network: &str, specs: &[LayerSpec], method: &FlopMethod, batch_size: usize) -> Result<FlopRow> {
    let b = batch_size as f64;
    let params: usize = specs.iter().map(LayerSpec::param_count).sum();
    let p = params as f64;
    let forward = forward_flops(specs, b);
    let (credit, credit_fixed, update) = match method {
        FlopMethod::Bp => (2.0 * forward, 0.0, 2.0 * p),
        FlopMethod::Tdca(settings) => {
            let bottom = BottomUp::Classifier(specs.to_vec());
            let classes = bottom.classes() as f64;
            let net = TdcaNetwork::net_specs(settings, &bottom)?;
            let layout = CreditLayout::build(&settings.granularity, &bottom, settings)?;
            // Mean output, mean error and mean loss.
            let state = 3.0 * b * classes;
            let credit_net = forward_flops(&net, 1.0);
            let mut fixed = credit_net;
            let mut per_batch = state;
            match (&layout, settings.mode) {
                (CreditLayout::PerParameter { .. }, _) => {}
                (CreditLayout::Layers(layers), CreditMode::Aggregate) => {
                    for (spec, l) in specs.iter().zip(layers) {
                        per_batch += b * spec.in_dim as f64;
                        if let Expansion::Dense(_) = l.expansion {
                            fixed += 2.0 * l.neurons as f64 * l.units as f64;
                        }
                    }
                }
                (CreditLayout::Layers(layers), CreditMode::ErrorGated) => {
                    per_batch += b * classes;
                    for (spec, l) in specs.iter().zip(layers) {
                        if let Expansion::Dense(_) = l.expansion {
                            fixed += 2.0 * l.neurons as f64 * l.units as f64 * classes;
                        }
                        per_batch += 2.0 * b * classes * l.neurons as f64;
                        per_batch += 2.0 * b * spec.in_dim as f64 * spec.out_dim as f64;
                    }
                }
            }
            (per_batch + fixed, fixed, 2.0 * p)
        }
    };
    Ok(FlopRow {
        network: network.to_string(),
        method: method_name(method),
        params,
        forward: forward / MEGA,
        credit: credit / MEGA,
        update: update / MEGA,
        credit_fixed: credit_fixed / MEGA,
    })
}
