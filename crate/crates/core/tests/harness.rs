use std::path::PathBuf;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tdca_core::harness::bp::train_bp;
use tdca_core::harness::field::{follow_field, gradient_field, FieldGrid, FieldSource, FIELD_SCALE, FIELD_STEPS};
use tdca_core::harness::flops::{count_flops, FlopMethod};
use tdca_core::harness::landscape::{landscape_eval, GridSpec, Plane};
use tdca_core::harness::ExperimentConfig;
use tdca_core::nn::{parse_specs, Activation, LayerSpec};
use tdca_core::tasks::{Dataset, DatasetId, MixedGaussian, Split};
use tdca_core::tdca::{CreditMode, TdcaSettings};

fn experiments_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../experiments")
}

#[test]
fn shipped_configs_parse_and_validate() {
    let mut count = 0;
    for entry in std::fs::read_dir(experiments_dir()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let cfg = ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            cfg.validate().unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
            assert_eq!(back, cfg);
            count += 1;
        }
    }
    assert!(count >= 7);
}

#[test]
fn flop_counts_scale_with_batch() {
    let specs = parse_specs("784:100:tanh 100:10:softmax").unwrap();
    let methods = [
        FlopMethod::Bp,
        FlopMethod::Tdca(TdcaSettings::default()),
        FlopMethod::Tdca(TdcaSettings {
            granularity: "group kind=line n=100 credits=10 sigma=5".parse().unwrap(),
            mode: CreditMode::ErrorGated,
            ..TdcaSettings::default()
        }),
    ];
    for m in &methods {
        let one = count_flops("n", &specs, m, 500).unwrap();
        let two = count_flops("n", &specs, m, 1000).unwrap();
        assert!((two.forward - 2.0 * one.forward).abs() < 1e-9);
        assert_eq!(one.update, two.update);
        assert_eq!(one.credit_fixed, two.credit_fixed);
        let per_batch = |r: &tdca_core::harness::flops::FlopRow| r.credit - r.credit_fixed;
        assert!((per_batch(&two) - 2.0 * per_batch(&one)).abs() < 1e-9);
        assert_eq!(one.total(), one.forward + one.credit + one.update);
    }
}

// A small network on random labels cannot fit them, so long descent ends
// near a finite minimum of the loss.
#[test]
fn trained_net_is_the_minimum_of_a_tiny_landscape() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = Array2::from_shape_fn((200, 3), |_| rng.gen_range(-1.0..1.0));
    let labels: Vec<usize> = (0..200).map(|_| rng.gen_range(0..10)).collect();
    let data = Dataset::new(x, labels, DatasetId::Mnist, Split::Train).unwrap();
    let specs = vec![
        LayerSpec::new(3, 4, Activation::Tanh),
        LayerSpec::new(4, 10, Activation::Softmax),
    ];
    let (mlp, _) = train_bp(&specs, &data, 0, 20_000, 0.5, false).unwrap();
    let origin = mlp.flatten().into_values();
    let mut dirs: Vec<Vec<f64>> = Vec::new();
    for _ in 0..2 {
        let mut d: Vec<f64> = (0..origin.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for prev in &dirs {
            let dot: f64 = d.iter().zip(prev).map(|(a, b)| a * b).sum();
            d.iter_mut().zip(prev).for_each(|(a, b)| *a -= dot * b);
        }
        let n = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        d.iter_mut().for_each(|v| *v /= n);
        dirs.push(d);
    }
    let plane = Plane {
        origin,
        directions: [dirs[0].clone(), dirs[1].clone()],
        explained: vec![0.5, 0.5],
    };
    let grid = GridSpec {
        rows: 3,
        cols: 3,
        u_range: [-0.05, 0.05],
        v_range: [-0.05, 0.05],
    };
    let l = landscape_eval(&specs, &data, &plane, &grid).unwrap();
    let center = l.loss[[1, 1]];
    for (idx, &v) in l.loss.indexed_iter() {
        if idx != (1, 1) {
            assert!(center < v, "{idx:?}: {v} <= {center}");
        }
    }
}

#[test]
fn bp_field_is_zero_at_the_global_minimum_and_traps_near_the_local_one() {
    let f = MixedGaussian::default();
    let (min, _) = f.global_minimum();
    let grid = FieldGrid {
        lo: min[0],
        hi: min[0],
        n: 1,
    };
    let s = gradient_field(FieldSource::Bp, &f, &grid).unwrap();
    assert!(s[0].dx.hypot(s[0].dy) < 1e-8);
    let end = follow_field(FieldSource::Bp, &f, [2.6, 2.6], FIELD_STEPS, FIELD_SCALE).unwrap();
    assert_eq!(f.basin_of(end, 0.2), Some(1));
    let end = follow_field(FieldSource::Bp, &f, [-0.8, 0.5], FIELD_STEPS, FIELD_SCALE).unwrap();
    assert_eq!(f.basin_of(end, 0.2), Some(0));
}
