use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tdca_core::nn::{Activation, LayerSpec};
use tdca_core::tasks::{Dataset, DatasetId, Split};
use tdca_core::tdca::inner::RunOptions;
use tdca_core::tdca::{
    BottomUp, ClassificationProblem, CreditMode, ExpansionRule, Granularity, HiddenGate, TdcaNetwork,
    TdcaSettings,
};

fn random_data(n: usize, dim: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs = Array2::from_shape_simple_fn((n, dim), || rng.gen_range(0.0..1.0));
    let labels = (0..n).map(|i| i % 10).collect();
    Dataset::new(inputs, labels, DatasetId::Mnist, Split::Train).unwrap()
}

fn specs(dim: usize, hidden: usize) -> Vec<LayerSpec> {
    vec![
        LayerSpec::new(dim, hidden, Activation::Tanh),
        LayerSpec::new(hidden, 10, Activation::Softmax),
    ]
}

/// A credit net with random weights everywhere, so credits are non-zero.
fn random_tdca(settings: TdcaSettings, bottom: BottomUp, seed: u64) -> TdcaNetwork {
    let base = TdcaNetwork::new(settings, bottom, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 77);
    let beta: Vec<f64> = (0..base.param_count()).map(|_| rng.gen_range(-0.5..0.5)).collect();
    base.with_params(&beta).unwrap()
}

fn compare_engines(settings: TdcaSettings, n: usize) {
    let problem = ClassificationProblem::new(random_data(n, 12, 3), specs(12, 16), 6).unwrap();
    let tdca = random_tdca(settings, BottomUp::Classifier(specs(12, 16)), 11);
    let opts = RunOptions {
        materialize: true,
        ..RunOptions::default()
    };
    let fast = problem.run(&tdca, 5, opts).unwrap();
    let slow = problem
        .run(
            &tdca,
            5,
            RunOptions {
                force_reference: true,
                ..opts
            },
        )
        .unwrap();
    let a = fast.mlp.unwrap().flatten();
    let b = slow.mlp.unwrap().flatten();
    let scale = b.values().iter().fold(1.0f64, |m, v| m.max(v.abs()));
    for (x, y) in a.values().iter().zip(b.values()) {
        assert!((x - y).abs() <= 1e-9 * scale, "{x} vs {y}");
    }
    assert_eq!(fast.trace.steps.len(), 6);
    assert!((fast.trace.final_loss - slow.trace.final_loss).abs() < 1e-9);
    for (s, t) in fast.trace.steps.iter().zip(&slow.trace.steps) {
        assert!((s.loss - t.loss).abs() < 1e-9);
    }
}

#[test]
fn fast_engine_matches_reference_aggregate() {
    for rule in [ExpansionRule::PresynapticMean, ExpansionRule::Broadcast] {
        compare_engines(
            TdcaSettings {
                rule,
                credit_scale: 0.05,
                hidden_width: 8,
                ..TdcaSettings::default()
            },
            40,
        );
    }
}

#[test]
fn fast_engine_matches_reference_gated() {
    for gate in [HiddenGate::None, HiddenGate::Derivative] {
        for granularity in [
            Granularity::PerNeuron,
            "group kind=grid h=4 w=4 credits=4 sigma=1".parse().unwrap(),
        ] {
            compare_engines(
                TdcaSettings {
                    granularity,
                    mode: CreditMode::ErrorGated,
                    gate,
                    credit_scale: 0.5,
                    output_scale: Some(1.5),
                    hidden_width: 8,
                    ..TdcaSettings::default()
                },
                50,
            );
        }
    }
}

#[test]
fn zero_credit_net_leaves_network_untouched() {
    let problem = ClassificationProblem::new(random_data(30, 5, 1), specs(5, 6), 4).unwrap();
    let tdca = TdcaNetwork::new(TdcaSettings::default(), BottomUp::Classifier(specs(5, 6)), 2).unwrap();
    let (mlp, trace) = tdca_core::tdca::inner_loop(&tdca, 9, &problem).unwrap();
    let init = tdca_core::nn::init_mlp(&specs(5, 6), 9).unwrap();
    assert_eq!(mlp.flatten(), init.flatten());
    assert_eq!(trace.steps.len(), 4);
    assert_eq!(trace.steps[0].accuracy, trace.final_accuracy);
}

#[test]
fn zero_steps_rejected() {
    assert!(ClassificationProblem::new(random_data(10, 3, 0), specs(3, 4), 0).is_err());
}

#[test]
fn inner_loop_is_deterministic() {
    let problem = ClassificationProblem::new(random_data(30, 5, 1), specs(5, 6), 5).unwrap();
    let settings = TdcaSettings {
        mode: CreditMode::ErrorGated,
        ..TdcaSettings::default()
    };
    let tdca = random_tdca(settings, BottomUp::Classifier(specs(5, 6)), 4);
    let a = tdca_core::tdca::inner_loop(&tdca, 3, &problem).unwrap();
    let b = tdca_core::tdca::inner_loop(&tdca, 3, &problem).unwrap();
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
}
