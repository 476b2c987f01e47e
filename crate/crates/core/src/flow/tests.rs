use super::*;
use crate::graph::{permute, NodePermutation};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_net(seed: u64) -> VelocityNet {
    let cfg = NetConfig {
        hidden_dim: 8,
        num_layers: 2,
        c_hid: 3,
        c_final: 2,
        head_dim: 4,
        time_dim: 8,
        final_hidden: 6,
        dropout: 0.0,
        ..Default::default()
    };
    let mut net = VelocityNet::new(cfg, seed).unwrap();
    // Give the zero-initialized output layer some weight so outputs are nonzero.
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    for name in ["out/w2", "out/b2", "out/w1"] {
        let t = net.params.get_mut(name).unwrap();
        t.data.iter_mut().for_each(|x| *x = rng.random_range(-0.5..0.5));
    }
    net
}

fn random_graph(n: usize, p: f64, rng: &mut ChaCha8Rng) -> AdjacencyState {
    let mut edges = vec![];
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    AdjacencyState::from_edges(n, &edges).unwrap()
}

fn random_probs(n: usize, rng: &mut ChaCha8Rng) -> AdjacencyState {
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = rng.random::<f64>();
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    AdjacencyState::from_matrix_unchecked(m)
}

fn random_mask(n: usize, rng: &mut ChaCha8Rng) -> ObservationMask {
    let hidden: Vec<_> = (0..n)
        .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
        .filter(|_| rng.random::<f64>() < 0.4)
        .collect();
    ObservationMask::from_hidden_pairs(n, &hidden).unwrap()
}

#[test]
fn fresh_net_outputs_zero() {
    let net = VelocityNet::new(NetConfig::default(), 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let a = random_graph(10, 0.3, &mut rng);
    let v = net.velocity(a.matrix(), 0.3).unwrap();
    assert!(v.data().iter().all(|&x| x == 0.0));
}

#[test]
fn velocity_is_symmetric_equivariant_and_deterministic() {
    let net = small_net(2);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let n = rng.random_range(2..=12);
        let a = random_probs(n, &mut rng);
        let t = rng.random::<f64>();
        let v = net.velocity(a.matrix(), t).unwrap();
        assert_eq!(v, net.velocity(a.matrix(), t).unwrap());
        for i in 0..n {
            assert_eq!(v[(i, i)], 0.0);
            for j in 0..n {
                assert_eq!(v[(i, j)], v[(j, i)]);
            }
        }
        let p = NodePermutation::random(n, &mut rng);
        let pv = net.velocity(permute(&a, &p).unwrap().matrix(), t).unwrap();
        let expect = permute(&AdjacencyState::from_matrix_unchecked(v), &p).unwrap();
        assert!(expect.matrix().max_abs_diff(&pv) <= 1e-8);
    }
}

#[test]
fn capacity_is_enforced() {
    let cfg = NetConfig {
        max_nodes: 4,
        ..Default::default()
    };
    let net = VelocityNet::new(cfg, 0).unwrap();
    let err = net.velocity(&Matrix::zeros(5, 5), 0.0).unwrap_err();
    assert!(matches!(err, PifmError::Capacity(_)));
}

#[test]
fn checkpoint_round_trip() {
    let net = small_net(4);
    let ck = net.to_checkpoint(serde_json::json!({"seed": 4}));
    let mut buf = vec![];
    ck.write_to(&mut buf).unwrap();
    let back = VelocityNet::from_checkpoint(&crate::nn::Checkpoint::read_from(&mut buf.as_slice()).unwrap()).unwrap();
    assert_eq!(back, net);
}

#[test]
fn source_state_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let a1 = random_graph(6, 0.5, &mut rng);
    let probs = random_probs(6, &mut rng);
    let a0 = build_a0(&a1, &ObservationMask::all_observed(6), &probs, 0.3, TaskKind::LinkPrediction, &mut rng).unwrap();
    assert_eq!(a0, a1);

    let xi = random_mask(6, &mut rng);
    let a0 = build_a0(&a1, &xi, &probs, 0.0, TaskKind::LinkPrediction, &mut rng).unwrap();
    for i in 0..6 {
        for j in 0..6 {
            if i == j {
                assert_eq!(a0.get(i, j), 0.0);
            } else if xi.is_observed(i, j) {
                assert_eq!(a0.get(i, j), a1.get(i, j));
            } else {
                assert_eq!(a0.get(i, j), probs.get(i, j));
            }
        }
    }

    let noisy = build_a0(&a1, &xi, &probs, 0.5, TaskKind::LinkPrediction, &mut rng).unwrap();
    for (i, j) in xi.observed_pairs() {
        assert_eq!(noisy.get(i, j), a1.get(i, j));
    }
    assert!(xi.hidden_pairs().iter().any(|&(i, j)| noisy.get(i, j) != probs.get(i, j)));

    assert!(matches!(
        build_a0(&a1, &xi, &probs, -0.1, TaskKind::LinkPrediction, &mut rng),
        Err(PifmError::Config(_))
    ));
}

#[test]
fn denoising_with_unit_prior_returns_observation() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let g = crate::graph::GraphRecord::new(0, random_graph(8, 0.3, &mut rng)).unwrap();
    let task = crate::data::TaskSpec::new(TaskKind::Denoising, 0.3, 1).unwrap();
    let (a_obs, xi) = crate::data::make_task_input(&g, &task, &mut rng).unwrap();
    let ones = AdjacencyState::complete(8);
    let a0 = build_a0(&a_obs, &xi, &ones, 0.0, TaskKind::Denoising, &mut rng).unwrap();
    assert_eq!(a0, a_obs);
}

#[test]
fn expansion_matches_its_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let g = crate::graph::GraphRecord::new(0, random_graph(9, 0.4, &mut rng)).unwrap();
    let task = crate::data::TaskSpec::new(TaskKind::Expansion, 0.5, 2).unwrap();
    let (a_obs, xi) = crate::data::make_task_input(&g, &task, &mut rng).unwrap();
    let probs = random_probs(9, &mut rng);
    // From the clean graph or from the observation, same state.
    let from_clean = build_a0(g.adjacency(), &xi, &probs, 0.0, TaskKind::Expansion, &mut rng).unwrap();
    let from_obs = build_a0(&a_obs, &xi, &probs, 0.0, TaskKind::Expansion, &mut rng).unwrap();
    assert_eq!(from_clean, from_obs);
    for i in 0..9 {
        for j in 0..9 {
            if i != j {
                let o = a_obs.get(i, j);
                assert_eq!(from_obs.get(i, j), o + (1.0 - o) * probs.get(i, j));
            }
        }
    }
}

#[test]
fn interpolation_endpoints_and_midpoint() {
    let zeros = AdjacencyState::empty(5);
    let ones = AdjacencyState::complete(5);
    assert_eq!(interpolate(&zeros, &ones, 0.0).unwrap(), zeros);
    assert_eq!(interpolate(&zeros, &ones, 1.0).unwrap(), ones);
    let mid = interpolate(&zeros, &ones, 0.5).unwrap();
    for i in 0..5 {
        for j in 0..5 {
            assert_eq!(mid.get(i, j), if i == j { 0.0 } else { 0.5 });
        }
    }
    assert!(matches!(interpolate(&zeros, &ones, 1.5), Err(PifmError::Range(_))));
}

#[test]
fn single_euler_step_and_zero_field() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let a_obs = random_graph(7, 0.4, &mut rng);
    let xi = random_mask(7, &mut rng);
    let probs = random_probs(7, &mut rng);
    let net = small_net(6);
    let s = euler_sample(&net, &a_obs, &xi, &probs, TaskKind::LinkPrediction, 1, 0.2, false, true, 0, &mut rng).unwrap();
    let v = net.velocity(s.initial.matrix(), 0.0).unwrap();
    let expect = s.initial.matrix().zip_map(&v, |a, b| a + b).unwrap();
    assert_eq!(s.final_state.matrix(), &expect);
    assert_eq!(s.trajectory.as_ref().unwrap().len(), 2);

    let zero = VelocityNet::new(net.config.clone(), 0).unwrap();
    let s = euler_sample(&zero, &a_obs, &xi, &probs, TaskKind::LinkPrediction, 25, 0.2, false, false, 0, &mut rng).unwrap();
    assert_eq!(s.final_state, s.initial);
}

#[test]
fn clamping_restores_observed_entries() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let a_obs = random_graph(7, 0.4, &mut rng);
    let xi = random_mask(7, &mut rng);
    let probs = random_probs(7, &mut rng);
    let s = euler_sample(&small_net(1), &a_obs, &xi, &probs, TaskKind::LinkPrediction, 5, 0.1, true, false, 0, &mut rng).unwrap();
    for (i, j) in xi.observed_pairs() {
        assert_eq!(s.final_state.get(i, j), a_obs.get(i, j));
    }
}

#[test]
fn sampling_without_noise_is_equivariant() {
    let net = small_net(7);
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..5 {
        let n = rng.random_range(3..=10);
        let a_obs = random_graph(n, 0.4, &mut rng);
        let xi = random_mask(n, &mut rng);
        let probs = random_probs(n, &mut rng);
        let p = NodePermutation::random(n, &mut rng);
        let s = euler_sample(&net, &a_obs, &xi, &probs, TaskKind::LinkPrediction, 4, 0.0, false, false, 0, &mut rng).unwrap();
        let ps = euler_sample(
            &net,
            &permute(&a_obs, &p).unwrap(),
            &xi.permute(&p).unwrap(),
            &permute(&probs, &p).unwrap(),
            TaskKind::LinkPrediction,
            4,
            0.0,
            false,
            false,
            0,
            &mut rng,
        )
        .unwrap();
        let expect = permute(&s.final_state, &p).unwrap();
        assert!(expect.matrix().max_abs_diff(ps.final_state.matrix()) <= 1e-8);
    }
}

fn gaussian_base(a0: &AdjacencyState, xi: &ObservationMask, probs: &AdjacencyState, sigma: f64) -> f64 {
    xi.hidden_pairs()
        .iter()
        .map(|&(i, j)| {
            let z = (a0.get(i, j) - probs.get(i, j)) / sigma;
            -0.5 * z * z - sigma.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
        })
        .sum()
}

#[test]
fn log_density_of_zero_field_is_the_base() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let a1 = random_graph(6, 0.5, &mut rng);
    let xi = random_mask(6, &mut rng);
    let probs = random_probs(6, &mut rng);
    let a0 = build_a0(&a1, &xi, &probs, 0.3, TaskKind::LinkPrediction, &mut rng).unwrap();
    let zero = VelocityNet::new(small_net(0).config, 0).unwrap();
    let ld = log_density(&zero, &a1, &a0, &xi, &probs, 8, 0.3).unwrap();
    assert!((ld - gaussian_base(&a0, &xi, &probs, 0.3)).abs() < 1e-12);
    assert!(matches!(log_density(&zero, &a1, &a0, &xi, &probs, 8, 0.0), Err(PifmError::Config(_))));
}

#[test]
fn log_density_quadrature_converges_and_is_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let n = 6;
    let net = small_net(3);
    let a1 = random_graph(n, 0.5, &mut rng);
    let xi = random_mask(n, &mut rng);
    let probs = random_probs(n, &mut rng);
    let a0 = build_a0(&a1, &xi, &probs, 0.3, TaskKind::LinkPrediction, &mut rng).unwrap();
    let l64 = log_density(&net, &a1, &a0, &xi, &probs, 64, 0.3).unwrap();
    let l128 = log_density(&net, &a1, &a0, &xi, &probs, 128, 0.3).unwrap();
    assert!((l64 - l128).abs() <= 1e-3, "{l64} vs {l128}");

    let p = NodePermutation::random(n, &mut rng);
    let pl = log_density(
        &net,
        &permute(&a1, &p).unwrap(),
        &permute(&a0, &p).unwrap(),
        &xi.permute(&p).unwrap(),
        &permute(&probs, &p).unwrap(),
        64,
        0.3,
    )
    .unwrap();
    assert!((l64 - pl).abs() <= 1e-4, "{l64} vs {pl}");
}

#[test]
fn jacobian_trace_of_a_known_field() {
    // Before the output layer is trained only b2 matters: a constant field,
    // zero divergence.
    let mut net = VelocityNet::new(small_net(0).config, 0).unwrap();
    net.params.get_mut("out/b2").unwrap().data[0] = 0.7;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random_probs(5, &mut rng);
    assert!(jacobian_trace(&net, a.matrix(), 0.4).unwrap().abs() < 1e-9);
}

#[test]
fn distortion_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let a1 = random_graph(6, 0.5, &mut rng);
    let xi = random_mask(6, &mut rng);
    assert_eq!(mse_distortion(&a1, &a1, &xi).unwrap(), 0.0);
    let half = AdjacencyState::from_matrix_unchecked(Matrix::from_fn(6, 6, |i, j| if i == j { 0.0 } else { 0.5 }));
    assert_eq!(mse_distortion(&half, &a1, &xi).unwrap(), 0.25);
    let pred = random_probs(6, &mut rng);
    let mut s = 0.0;
    let mut c = 0.0;
    for i in 0..6 {
        for j in 0..6 {
            if i < j && !xi.is_observed(i, j) {
                s += (pred.get(i, j) - a1.get(i, j)).powi(2);
                c += 1.0;
            }
        }
    }
    assert!((mse_distortion(&pred, &a1, &xi).unwrap() - s / c).abs() < 1e-15);
    assert!(matches!(
        mse_distortion(&a1, &a1, &ObservationMask::all_observed(6)),
        Err(PifmError::UndefinedMetric(_))
    ));
}

#[test]
fn loss_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let net = small_net(9);
    let a_t = random_probs(6, &mut rng);
    let target = random_probs(6, &mut rng);
    let w = Matrix::from_fn(6, 6, |i, j| if i < j { 1.0 } else { 0.0 });
    let loss_of = |net: &VelocityNet| {
        let mut tape = Tape::new();
        let v = net.forward_on_tape::<ChaCha8Rng>(&mut tape, a_t.matrix(), 0.35, None).unwrap();
        let l = tape.weighted_mse(v, target.matrix().clone(), w.clone()).unwrap();
        (tape, l)
    };
    let (mut tape, l) = loss_of(&net);
    tape.backward(l).unwrap();
    let grads = tape.param_grads();
    let h = 1e-6;
    for (name, t) in net.params.iter() {
        let g = grads.get(name).unwrap();
        for k in [0, t.data.len() / 2, t.data.len() - 1] {
            let mut plus = net.clone();
            plus.params.get_mut(name).unwrap().data[k] += h;
            let mut minus = net.clone();
            minus.params.get_mut(name).unwrap().data[k] -= h;
            let (tp, lp) = loss_of(&plus);
            let (tm, lm) = loss_of(&minus);
            let fd = (tp.scalar(lp) - tm.scalar(lm)) / (2.0 * h);
            let err = (fd - g[k]).abs() / fd.abs().max(g[k].abs()).max(1e-6);
            assert!(err <= 1e-4, "{name}[{k}]: fd {fd} vs {}", g[k]);
        }
    }
}

use crate::nn::Tape;

#[test]
fn training_reduces_the_loss_on_one_graph() {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let g = crate::graph::GraphRecord::new(0, random_graph(8, 0.4, &mut rng)).unwrap();
    let train = vec![g];
    let task = crate::data::TaskSpec::new(TaskKind::LinkPrediction, 0.3, 3).unwrap();
    let prior = crate::priors::PriorModel::Constant { value: 0.5 };
    let cfg = FlowConfig {
        sigma_s_train: 0.0,
        lr: 3e-3,
        batch_size: 1,
        epochs: 1500,
        mask_pool: Some(1),
        net: NetConfig {
            final_hidden: 32,
            ..small_net(0).config
        },
        ..Default::default()
    };
    let trained = train_flow(&train, &[], &prior, task, &cfg, 1).unwrap();
    let mean = |h: &[EpochStats]| h.iter().map(|e| e.train_loss).sum::<f64>() / h.len() as f64;
    let first = mean(&trained.history[..50]);
    let last = mean(&trained.history[trained.history.len() - 50..]);
    assert!(last < 0.25 * first, "{first} -> {last}");
}

#[test]
fn zero_target_keeps_velocity_small() {
    // Every pair observed cannot be posed as a task, so emulate a dataset
    // where the flow has nothing to move: a1 == a0 through a unit prior on
    // the complete graph under expansion (no edges to drop leaves ξ == A).
    let train = vec![crate::graph::GraphRecord::new(0, AdjacencyState::complete(5)).unwrap()];
    let task = crate::data::TaskSpec::new(TaskKind::Expansion, 0.3, 0).unwrap();
    let prior = crate::priors::PriorModel::Constant { value: 1.0 };
    let cfg = FlowConfig {
        sigma_s_train: 0.0,
        lr: 1e-3,
        batch_size: 1,
        epochs: 50,
        net: small_net(0).config,
        ..Default::default()
    };
    let trained = train_flow(&train, &[], &prior, task, &cfg, 2).unwrap();
    assert!(trained.history.iter().all(|h| h.train_loss == 0.0));
    let v = trained.net.velocity(AdjacencyState::complete(5).matrix(), 0.5).unwrap();
    assert!(v.data().iter().all(|&x| x == 0.0));
}

#[test]
fn training_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(60);
    let train: Vec<_> = (0..4)
        .map(|k| crate::graph::GraphRecord::new(k, random_graph(7, 0.4, &mut rng)).unwrap())
        .collect();
    let task = crate::data::TaskSpec::new(TaskKind::LinkPrediction, 0.3, 3).unwrap();
    let prior = crate::priors::PriorModel::Constant { value: 0.5 };
    let cfg = FlowConfig {
        batch_size: 2,
        epochs: 3,
        net: NetConfig { dropout: 0.2, ..small_net(0).config },
        ..Default::default()
    };
    let a = train_flow(&train, &train[..1], &prior, task, &cfg, 5).unwrap();
    let b = train_flow(&train, &train[..1], &prior, task, &cfg, 5).unwrap();
    assert_eq!(a.net, b.net);
    assert_eq!(a.history, b.history);
}

#[test]
fn cosine_schedule_runs_from_lr_to_floor() {
    let constant = FlowConfig { lr: 2e-3, epochs: 10, ..Default::default() };
    assert_eq!(constant.lr_at(0), 2e-3);
    assert_eq!(constant.lr_at(9), 2e-3);
    let cfg = FlowConfig { lr_min: Some(1e-4), ..constant.clone() };
    assert_eq!(cfg.lr_at(0), 2e-3);
    assert!((cfg.lr_at(5) - 0.5 * (2e-3 + 1e-4)).abs() < 1e-15);
    assert!((cfg.lr_at(10) - 1e-4).abs() < 1e-15);
    assert!((cfg.lr_at(50) - 1e-4).abs() < 1e-15);
    assert!((1..10).all(|e| cfg.lr_at(e) < cfg.lr_at(e - 1)));
    assert!(FlowConfig { lr_min: Some(3e-3), ..constant }.validate().is_err());
}
