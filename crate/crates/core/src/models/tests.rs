use rand::Rng;

use super::*;
use crate::rng::rng_from;

/// Log-posterior from scratch: dense `W`, sums rebuilt per call, textbook
/// formulas. Shares nothing with the cached evaluation path.
fn naive_log_posterior(model: &Model, data: &SampleMatrix, st: &SparseWeights) -> f64 {
    let n = data.n();
    let mut w = vec![vec![0.0; n]; n];
    for (i, j, v) in st.sorted_edges() {
        w[i][j] = v;
        w[j][i] = v;
    }
    let mut total = 0.0;
    for s in 0..data.m() {
        for i in 0..n {
            let field: f64 = (0..n).filter(|&j| j != i).map(|j| w[i][j] * data.get(j, s)).sum();
            let x = data.get(i, s);
            let th = st.theta(i);
            total += match model.kind {
                ModelKind::Ising => {
                    let h = field + th;
                    x * h - (2.0 * h.cosh()).ln()
                }
                ModelKind::Gaussian => {
                    -(x + th * th * field).powi(2) / (2.0 * th * th) - th.ln()
                }
            };
        }
    }
    let mut prior = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            prior -= model.lambda * w[i][j].abs();
        }
    }
    total + prior
}

fn with_weight(st: &SparseWeights, data: &SampleMatrix, i: usize, j: usize, w: f64) -> SparseWeights {
    let mut c = st.clone();
    c.set_edge(i, j, w, data).unwrap();
    c
}

fn gaussian_data(n: usize, m: usize, seed: u64) -> SampleMatrix {
    let mut rng = rng_from(seed);
    let mut vals = Vec::with_capacity(n * m);
    for _ in 0..n * m {
        let u: f64 = rng.random_range(-1.0..1.0);
        let v: f64 = rng.random_range(-1.0..1.0);
        vals.push(u + 0.5 * v);
    }
    SampleMatrix::new(n, m, vals).unwrap()
}

fn spin_data(n: usize, m: usize, seed: u64) -> SampleMatrix {
    let mut rng = rng_from(seed);
    let vals = (0..n * m)
        .map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 })
        .collect();
    SampleMatrix::new_spins(n, m, vals).unwrap()
}

fn random_state(model: &Model, data: &SampleMatrix, seed: u64, density: f64) -> SparseWeights {
    let mut rng = rng_from(seed);
    let n = data.n();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random_bool(density) {
                edges.push((i, j, rng.random_range(-0.6..0.6)));
            }
        }
    }
    let theta = (0..n)
        .map(|_| match model.kind {
            ModelKind::Ising => rng.random_range(-0.5..0.5),
            ModelKind::Gaussian => rng.random_range(0.5..1.5),
        })
        .collect();
    let mut st = SparseWeights::from_parts(n, edges, theta).unwrap();
    st.bind(data).unwrap();
    st
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
}

#[test]
fn empty_ising_state_scores_minus_nm_log2() {
    let data = spin_data(5, 9, 1);
    let model = Model::ising(0.3).unwrap();
    let st = SparseWeights::empty_for(&data, 0.0);
    let lp = model.log_posterior(&data, &st).unwrap();
    assert!((lp + 45.0 * 2f64.ln()).abs() < 1e-12);
}

#[test]
fn empty_gaussian_state_scores_minus_half_sum_of_squares() {
    let data = gaussian_data(4, 11, 2);
    let model = Model::gaussian(0.3).unwrap();
    let st = SparseWeights::empty_for(&data, 1.0);
    let lp = model.log_posterior(&data, &st).unwrap();
    let expect: f64 = -data.values().iter().map(|v| v * v).sum::<f64>() / 2.0;
    assert!((lp - expect).abs() < 1e-12);
}

#[test]
fn cached_log_posterior_matches_naive_evaluator() {
    for seed in 0..5 {
        for model in [Model::ising(0.2).unwrap(), Model::gaussian(0.2).unwrap()] {
            let data = match model.kind {
                ModelKind::Ising => spin_data(8, 20, seed),
                ModelKind::Gaussian => gaussian_data(8, 20, seed),
            };
            let st = random_state(&model, &data, seed + 100, 0.4);
            let fast = model.log_posterior(&data, &st).unwrap();
            let slow = naive_log_posterior(&model, &data, &st);
            assert!(rel_close(fast, slow, 1e-10), "{:?}: {fast} vs {slow}", model.kind);
        }
    }
}

#[test]
fn huge_penalty_forces_exact_zero() {
    for model in [Model::ising(1e12).unwrap(), Model::gaussian(1e12).unwrap()] {
        let data = match model.kind {
            ModelKind::Ising => spin_data(4, 30, 3),
            ModelKind::Gaussian => gaussian_data(4, 30, 3),
        };
        let st = random_state(&model, &data, 4, 0.5);
        for (i, j) in [(0, 1), (1, 3), (2, 3)] {
            let up = model.optimize_edge(&data, &st, i, j).unwrap();
            assert_eq!(up.weight, 0.0, "{:?} ({i},{j})", model.kind);
        }
    }
}

#[test]
fn gaussian_edge_matches_grid_search() {
    // two nodes with a strong negative cross-moment
    let mut rng = rng_from(5);
    let m = 60;
    let mut vals = vec![0.0; 2 * m];
    for s in 0..m {
        let z: f64 = rng.random_range(-1.0..1.0);
        let e: f64 = rng.random_range(-0.3..0.3);
        vals[s] = z;
        vals[m + s] = -z + e;
    }
    let data = SampleMatrix::new(2, m, vals).unwrap();
    let model = Model::gaussian(0.05).unwrap();
    let st = SparseWeights::empty_for(&data, 0.8);
    let up = model.optimize_edge(&data, &st, 0, 1).unwrap();

    let (mut best_w, mut best_v) = (0.0, f64::NEG_INFINITY);
    let steps = 1_000_000;
    for k in 0..=steps {
        let w = -50.0 + 100.0 * k as f64 / steps as f64;
        let v = naive_log_posterior(&model, &data, &with_weight(&st, &data, 0, 1, w));
        if v > best_v {
            best_v = v;
            best_w = w;
        }
    }
    assert!((up.weight - best_w).abs() < 1e-3, "{} vs grid {best_w}", up.weight);
    let base = naive_log_posterior(&model, &data, &st);
    assert!((up.gain - (best_v - base)).abs() < 1e-3);
}

#[test]
fn ising_perfectly_correlated_pair_has_stationary_optimum() {
    let m = 40;
    let mut rng = rng_from(6);
    let row: Vec<f64> = (0..m)
        .map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 })
        .collect();
    let mut vals = row.clone();
    vals.extend(&row);
    let data = SampleMatrix::new_spins(2, m, vals).unwrap();
    let model = Model::ising(0.0).unwrap();
    let st = SparseWeights::empty_for(&data, 0.0);
    let up = model.optimize_edge(&data, &st, 0, 1).unwrap();
    assert!(up.weight > 0.0);
    let h = 1e-4;
    let fd = (naive_log_posterior(&model, &data, &with_weight(&st, &data, 0, 1, up.weight + h))
        - naive_log_posterior(&model, &data, &with_weight(&st, &data, 0, 1, up.weight - h)))
        / (2.0 * h);
    assert!(fd.abs() < 1e-6, "derivative {fd} at {}", up.weight);
}

#[test]
fn ising_theta_saturates_on_constant_node() {
    let data = SampleMatrix::new_spins(2, 6, vec![1.0; 6].into_iter().chain([1.0, -1.0, 1.0, -1.0, 1.0, -1.0]).collect()).unwrap();
    let model = Model::ising(0.1).unwrap();
    let st = SparseWeights::empty_for(&data, 0.0);
    let up = model.optimize_theta(&data, &st, 0).unwrap();
    assert_eq!(up.theta, ising::THETA_LIMIT);
    assert!(matches!(up.warning, Some(OptimWarning::ThetaClamped { node: 0, .. })));
    let bal = model.optimize_theta(&data, &st, 1).unwrap();
    assert!(bal.theta.abs() < 1e-8);
    assert!(bal.warning.is_none());
}

#[test]
fn ising_theta_matches_magnetization() {
    let data = spin_data(3, 50, 7);
    let model = Model::ising(0.0).unwrap();
    let st = SparseWeights::empty_for(&data, 0.0);
    for i in 0..3 {
        let mean = data.row(i).iter().sum::<f64>() / 50.0;
        let up = model.optimize_theta(&data, &st, i).unwrap();
        assert!((up.theta - mean.atanh()).abs() < 1e-10);
    }
}

#[test]
fn gaussian_theta_is_root_mean_square_with_empty_network() {
    let data = gaussian_data(3, 40, 8);
    let model = Model::gaussian(0.0).unwrap();
    let st = SparseWeights::empty_for(&data, 1.0);
    for i in 0..3 {
        let up = model.optimize_theta(&data, &st, i).unwrap();
        let rms = (data.row(i).iter().map(|v| v * v).sum::<f64>() / 40.0).sqrt();
        assert!((up.theta - rms).abs() < 1e-6);
        // grid search over theta on the naive objective
        let mut best = (0.0, f64::NEG_INFINITY);
        for k in 1..=200_000 {
            let t = k as f64 * 1e-5;
            let mut c = st.clone();
            c.set_theta(i, t);
            let v = naive_log_posterior(&model, &data, &c);
            if v > best.1 {
                best = (t, v);
            }
        }
        assert!((up.theta - best.0).abs() < 2e-5, "{} vs grid {}", up.theta, best.0);
    }
}

#[test]
fn gaussian_theta_clamps_on_zero_row() {
    let data = SampleMatrix::new(2, 3, vec![0.0, 0.0, 0.0, 1.0, 2.0, 3.0]).unwrap();
    let model = Model::gaussian(0.0).unwrap();
    let st = SparseWeights::empty_for(&data, 1.0);
    let up = model.optimize_theta(&data, &st, 0).unwrap();
    assert_eq!(up.theta, gaussian::THETA_MIN);
    assert!(up.warning.is_some());
}

#[test]
fn distance_is_symmetric_and_memoized() {
    let data = gaussian_data(12, 25, 9);
    let model = Model::gaussian(0.1).unwrap();
    let st = random_state(&model, &data, 10, 0.2);
    let mut rng = rng_from(11);
    for mode in [DistanceMode::Exact, DistanceMode::Gradient] {
        let cache = DistanceCache::new();
        cache.begin_generation();
        for _ in 0..100 {
            let i = rng.random_range(0..12);
            let j = (i + rng.random_range(1..12)) % 12;
            let fresh = DistanceCache::disabled();
            let a = model.distance(&data, &st, i, j, mode, &fresh).unwrap();
            let b = model.distance(&data, &st, j, i, mode, &fresh).unwrap();
            assert_eq!(a, b);
        }
        let before = cache.evaluations();
        let a = model.distance(&data, &st, 3, 7, mode, &cache).unwrap();
        let after_first = cache.evaluations();
        let b = model.distance(&data, &st, 7, 3, mode, &cache).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert_eq!(after_first, before + 1);
        assert_eq!(cache.evaluations(), after_first);
    }
}

#[test]
fn exact_distance_matches_grid_search() {
    for seed in 0..3 {
        for model in [Model::ising(0.5).unwrap(), Model::gaussian(0.5).unwrap()] {
            let data = match model.kind {
                ModelKind::Ising => spin_data(8, 20, seed + 20),
                ModelKind::Gaussian => gaussian_data(8, 20, seed + 20),
            };
            let st = random_state(&model, &data, seed + 30, 0.3);
            let base = naive_log_posterior(&model, &data, &st);
            let cache = DistanceCache::disabled();
            for (i, j) in [(0, 1), (2, 5), (3, 7)] {
                let d = model
                    .distance(&data, &st, i, j, DistanceMode::Exact, &cache)
                    .unwrap();
                let mut best = f64::NEG_INFINITY;
                for k in 0..=8000 {
                    let w = -4.0 + k as f64 * 1e-3;
                    best = best.max(naive_log_posterior(&model, &data, &with_weight(&st, &data, i, j, w)));
                }
                best = best.max(base);
                assert!(
                    (d - -(best - base)).abs() < 1e-3,
                    "{:?} ({i},{j}): {d} vs {}",
                    model.kind,
                    -(best - base)
                );
            }
        }
    }
}

#[test]
fn pairs_held_at_zero_rank_by_kink_margin() {
    for model in [Model::ising(6.0).unwrap(), Model::gaussian(4.0).unwrap()] {
        let data = match model.kind {
            ModelKind::Ising => spin_data(10, 30, 40),
            ModelKind::Gaussian => gaussian_data(10, 30, 40),
        };
        let st = model.initial_state(&data).unwrap();
        let cache = DistanceCache::disabled();
        let mut held = Vec::new();
        for i in 0..10 {
            for j in i + 1..10 {
                let d = model.distance(&data, &st, i, j, DistanceMode::Exact, &cache).unwrap();
                let g = model.distance(&data, &st, i, j, DistanceMode::Gradient, &cache).unwrap();
                let gain = model.optimize_edge(&data, &st, i, j).unwrap().gain;
                if gain > 0.0 {
                    assert_eq!(d, -gain);
                    assert!(g < 0.0);
                } else {
                    assert!((0.0..=PLATEAU_SCALE).contains(&d));
                    assert_eq!(d, g);
                    held.push((model.gradient(&data, &st, i, j).unwrap().abs(), d));
                }
            }
        }
        assert!(held.len() > 5, "{:?}: {} held pairs", model.kind, held.len());
        held.sort_by(|a, b| a.0.total_cmp(&b.0));
        assert!(held.windows(2).all(|w| w[1].1 <= w[0].1));
    }
}

#[test]
fn edge_gain_equals_objective_change() {
    for seed in 0..6 {
        for model in [Model::ising(0.3).unwrap(), Model::gaussian(0.3).unwrap()] {
            let data = match model.kind {
                ModelKind::Ising => spin_data(8, 30, seed + 40),
                ModelKind::Gaussian => gaussian_data(8, 30, seed + 40),
            };
            let mut st = random_state(&model, &data, seed + 50, 0.3);
            for (i, j) in [(0, 1), (1, 2), (4, 6), (5, 7)] {
                let before = model.log_posterior(&data, &st).unwrap();
                let up = model.optimize_edge(&data, &st, i, j).unwrap();
                st.set_edge(i, j, up.weight, &data).unwrap();
                let after = model.log_posterior(&data, &st).unwrap();
                assert!(after - before >= -1e-9);
                assert!(
                    ((after - before) - up.gain).abs() <= 1e-8 * up.gain.abs().max(1.0),
                    "{:?}: change {} vs gain {}",
                    model.kind,
                    after - before,
                    up.gain
                );
            }
        }
    }
}

#[test]
fn analytic_gradient_matches_central_difference() {
    for seed in 0..4 {
        for model in [Model::ising(0.4).unwrap(), Model::gaussian(0.4).unwrap()] {
            let data = match model.kind {
                ModelKind::Ising => spin_data(7, 25, seed + 60),
                ModelKind::Gaussian => gaussian_data(7, 25, seed + 60),
            };
            let st = random_state(&model, &data, seed + 70, 0.6);
            for (i, j, w) in st.sorted_edges() {
                if w.abs() <= 1e-3 {
                    continue;
                }
                let g = model.gradient(&data, &st, i, j).unwrap();
                let h = 1e-6 * w.abs().max(1.0);
                let fd = (naive_log_posterior(&model, &data, &with_weight(&st, &data, i, j, w + h))
                    - naive_log_posterior(&model, &data, &with_weight(&st, &data, i, j, w - h)))
                    / (2.0 * h);
                assert!(
                    (g - fd).abs() <= 1e-5 * g.abs().max(fd.abs()).max(1.0),
                    "{:?} ({i},{j}): {g} vs {fd}",
                    model.kind
                );
            }
        }
    }
}

#[test]
fn ising_conditionals_normalize_in_random_states() {
    let data = spin_data(6, 10, 80);
    let model = Model::ising(0.0).unwrap();
    let st = random_state(&model, &data, 81, 0.7);
    for i in 0..6 {
        for s in 0..10 {
            let h = st.row_sums(i)[s] + st.theta(i);
            let up = ising::term(1.0, h).exp();
            let down = ising::term(-1.0, h).exp();
            assert!((up + down - 1.0).abs() <= 1e-12);
        }
    }
}

fn standardized(data: &SampleMatrix) -> SampleMatrix {
    let (n, m) = (data.n(), data.m());
    let mut vals = Vec::with_capacity(n * m);
    for i in 0..n {
        let row = data.row(i);
        let mean = row.iter().sum::<f64>() / m as f64;
        let sd = (row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / m as f64).sqrt();
        vals.extend(row.iter().map(|x| (x - mean) / sd));
    }
    SampleMatrix::new(n, m, vals).unwrap()
}

fn best_pair(model: &Model, data: &SampleMatrix, st: &SparseWeights, mode: DistanceMode) -> (usize, usize) {
    let cache = DistanceCache::disabled();
    let n = data.n();
    let mut best = (f64::INFINITY, 0, 0);
    for i in 0..n {
        for j in i + 1..n {
            let d = model.distance(data, st, i, j, mode, &cache).unwrap();
            if d < best.0 {
                best = (d, i, j);
            }
        }
    }
    (best.1, best.2)
}

// Exact mode ranks pairs by squared correlation and gradient mode by
// covariance, so the argmins coincide when rows share a common scale.
#[test]
fn gradient_and_exact_modes_pick_the_same_best_pair() {
    use crate::synth::{gen_er_precision, sample_gaussian, sample_ising, GeneratorSpec, GibbsConfig};
    let spec = |seed, sigma| GeneratorSpec {
        n: 16,
        mean_deg: 3.0,
        weight_mu: 0.0,
        weight_sigma: sigma,
        epsilon: 0.1,
        seed,
    };
    let (mut gauss, mut gauss_swept, mut spins) = (0, 0, 0);
    for seed in 0..10 {
        let truth = gen_er_precision(&spec(seed, 1.0)).unwrap();
        let data = standardized(&sample_gaussian(&truth, 200, seed + 1000).unwrap());
        let model = Model::gaussian(0.05).unwrap();
        let mut st = model.initial_state(&data).unwrap();
        if best_pair(&model, &data, &st, DistanceMode::Exact) == best_pair(&model, &data, &st, DistanceMode::Gradient) {
            gauss += 1;
        }
        for i in 0..16 {
            for j in i + 1..16 {
                let up = model.optimize_edge(&data, &st, i, j).unwrap();
                st.set_edge(i, j, up.weight, &data).unwrap();
            }
        }
        model.update_thetas(&data, &mut st).unwrap();
        if best_pair(&model, &data, &st, DistanceMode::Exact) == best_pair(&model, &data, &st, DistanceMode::Gradient) {
            gauss_swept += 1;
        }

        let couplings = gen_er_precision(&spec(seed, 0.5)).unwrap().sorted_edges();
        let truth = SparseWeights::from_parts(16, couplings, vec![0.0; 16]).unwrap();
        let data = sample_ising(&truth, 500, GibbsConfig::default(), seed).unwrap();
        let model = Model::ising(0.05).unwrap();
        let st = model.initial_state(&data).unwrap();
        if best_pair(&model, &data, &st, DistanceMode::Exact) == best_pair(&model, &data, &st, DistanceMode::Gradient) {
            spins += 1;
        }
    }
    assert!(gauss >= 9, "gaussian argmin agreement {gauss}/10");
    assert!(gauss_swept >= 9, "gaussian agreement after one sweep {gauss_swept}/10");
    assert!(spins >= 9, "ising argmin agreement {spins}/10");
}

#[test]
fn invalid_inputs_are_rejected() {
    assert!(Model::gaussian(-1.0).is_err());
    assert!(Model::gaussian(f64::NAN).is_err());
    let data = gaussian_data(3, 4, 90);
    let model = Model::gaussian(0.1).unwrap();
    let st = SparseWeights::empty_for(&data, 0.0);
    assert!(model.log_posterior(&data, &st).is_err());
    let st = SparseWeights::empty_for(&data, 1.0);
    assert!(matches!(
        model.optimize_edge(&data, &st, 1, 1),
        Err(Error::DiagonalWrite(1))
    ));
    let ising = Model::ising(0.1).unwrap();
    assert!(ising.initial_state(&data).is_err());
}
